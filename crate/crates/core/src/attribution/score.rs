use crate::codec::{decode_hard, CarrierBank, DualBank, Secret};
use crate::concepts::{ConceptId, ConceptRegistry};
use crate::error::{ensure, Result};
use crate::image::Image;

/// Number of positions at which two secrets agree.
pub fn agreement(a: &Secret, b: &Secret) -> Result<usize> {
    Ok(a.len() - a.hamming(b)?)
}

/// Agreement below which an image is declared unwatermarked: `b/2 + 2√b`.
pub fn null_threshold(bits: usize) -> f64 {
    let b = bits as f64;
    b / 2.0 + 2.0 * b.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttributionResult {
    pub predicted: ConceptId,
    pub agreement: usize,
    pub bit_accuracy: f64,
    /// Lead over the runner-up concept; equals `agreement` for a one-concept registry.
    pub margin: usize,
    pub null_flag: bool,
}

/// Best-agreeing concept; ties go to the lowest index.
pub fn attribute(s_hat: &Secret, registry: &ConceptRegistry) -> Result<AttributionResult> {
    ensure!(!registry.is_empty(), InvalidArgument, "empty concept registry");
    ensure!(
        s_hat.len() == registry.bits(),
        ShapeMismatch,
        "{}-bit secret against a {}-bit registry",
        s_hat.len(),
        registry.bits()
    );
    let mut best = (0usize, 0usize);
    let mut runner_up = None::<usize>;
    for (j, s) in registry.secrets().iter().enumerate() {
        let a = s_hat.len() - s_hat.hamming_unchecked(s);
        if j == 0 {
            best = (0, a);
        } else if a > best.1 {
            runner_up = Some(best.1);
            best = (j, a);
        } else {
            runner_up = Some(runner_up.map_or(a, |r| r.max(a)));
        }
    }
    let (j, a) = best;
    Ok(AttributionResult {
        predicted: ConceptId(j),
        agreement: a,
        bit_accuracy: a as f64 / s_hat.len() as f64,
        margin: a - runner_up.unwrap_or(0),
        null_flag: (a as f64) < null_threshold(s_hat.len()),
    })
}

pub fn attribute_image(image: &Image, bank: &CarrierBank, registry: &ConceptRegistry) -> Result<AttributionResult> {
    attribute(&decode_hard(image, bank), registry)
}

/// Attributes the two halves of a dual-watermarked image independently.
pub fn attribute_dual(
    image: &Image,
    bank: &DualBank,
    media: &ConceptRegistry,
    content: &ConceptRegistry,
) -> Result<[AttributionResult; 2]> {
    let [a, b] = bank.decode_hard(image)?;
    Ok([attribute(&a, media)?, attribute(&b, content)?])
}
