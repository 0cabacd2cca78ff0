//! Two concepts rendered from the same procedural family carry different
//! watermarks. Visual retrieval cannot tell them apart; the watermark can.
//!
//! The retrieval index holds the unwatermarked reference images, so it
//! matches on content alone.

use conceptmark_core::attribution::attribute_image;
use conceptmark_core::baseline::FeatureIndex;
use conceptmark_core::codec::CarrierBank;
use conceptmark_core::concepts::{assign_secrets, build_encrypted_dataset_with_styles, ConceptId, ConceptStyle, DatasetConfig};
use conceptmark_core::parallel::Exec;
use conceptmark_core::{Image, Shape};

#[test]
fn identical_styles_defeat_retrieval_but_not_watermarks() {
    let shape = Shape::new(32, 32, 3);
    let bank = CarrierBank::build(5, 160, shape).unwrap();
    let reg = assign_secrets(2, 160, 5).unwrap();
    let shared = ConceptStyle::for_concept(ConceptId(3), 0);
    let ds = build_encrypted_dataset_with_styles(&reg, &bank, &DatasetConfig::new(100, shape, 0.3), |_| shared.clone()).unwrap();

    let train: Vec<(&Image, ConceptId)> = ds.train().map(|e| (&e.clean, e.concept)).collect();
    let index = FeatureIndex::build(Exec::default(), &train);
    let held: Vec<_> = ds.held_out().collect();
    assert_eq!(held.len(), 20);

    let baseline_hits = held.iter().filter(|e| index.nearest_concept(&e.encrypted).unwrap().0 == e.concept).count();
    let watermark_hits = held
        .iter()
        .filter(|e| attribute_image(&e.encrypted, &bank, &reg).unwrap().predicted == e.concept)
        .count();
    let baseline = baseline_hits as f64 / held.len() as f64;
    println!("baseline accuracy {baseline:.3}, watermark accuracy {:.3}", watermark_hits as f64 / held.len() as f64);
    // 20 fair coin flips fall inside [5, 15] with probability 0.96
    assert!((0.25..=0.75).contains(&baseline), "baseline accuracy {baseline}");
    assert_eq!(watermark_hits, held.len());
}
