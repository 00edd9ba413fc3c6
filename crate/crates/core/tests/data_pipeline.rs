use latentwave::data::dataset::generate;
use latentwave::data::{Dataset, DatasetSpec, FamilySpec, NormRecord};
use proptest::prelude::*;

fn fwi(n: usize, n_test: usize) -> (Dataset, Dataset) {
    let fam: FamilySpec = "flat_vel_a".parse().unwrap();
    generate(&DatasetSpec::fwi_desk(vec![fam], n, n_test)).unwrap()
}

#[test]
fn fwi_generation_is_deterministic_and_survives_a_file_round_trip() {
    let (tr, te) = fwi(3, 1);
    let (tr2, _) = fwi(3, 1);
    assert_eq!(tr, tr2);
    assert_eq!(tr.measurement_shape, vec![5, 250, 70]);
    assert_eq!(tr.property_shape, vec![1, 70, 70]);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("train.lwc");
    tr.write(&p).unwrap();
    assert_eq!(Dataset::read(&p).unwrap(), tr);
    // train and test share one normalization
    assert_eq!(tr.norm_property, te.norm_property);
    assert_eq!(tr.norm_measurement, te.norm_measurement);
    for i in 0..tr.len() {
        assert!(tr.property::<f64>(i).iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(tr.measurement::<f64>(i).iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn ct_samples_are_distinct_and_normalized() {
    let (tr, te) = generate(&DatasetSpec::ct_desk(4, 2, 11)).unwrap();
    assert_eq!(tr.property_shape, vec![1, 64, 64]);
    assert_eq!(te.len(), 2);
    let a = tr.property::<f64>(0);
    let b = tr.property::<f64>(1);
    assert_ne!(a, b);
    let mut ids = tr.ids.clone();
    ids.extend(&te.ids);
    ids.sort_by(f64::total_cmp);
    ids.dedup();
    assert_eq!(ids.len(), 6);
}

#[test]
fn concatenation_renormalizes_and_keeps_ids_unique() {
    let (a, _) = generate(&DatasetSpec::ct_desk(2, 1, 1)).unwrap();
    let (b, _) = generate(&DatasetSpec::ct_desk(3, 1, 2)).unwrap();
    let j = Dataset::concat(&[a.clone(), b.clone()]).unwrap();
    assert_eq!(j.len(), 5);
    let mut ids = j.ids.clone();
    ids.sort_by(f64::total_cmp);
    ids.dedup();
    assert_eq!(ids.len(), 5);
    // physical values are preserved through the joint range
    for (src, k) in [(&a, 0), (&b, 2)] {
        for (x, y) in src.property::<f64>(0).iter().zip(j.property::<f64>(k)) {
            let orig = src.norm_property.denormalize(*x);
            let back = j.norm_property.denormalize(y);
            assert!((orig - back).abs() <= 1e-6 * (1.0 + orig.abs()), "{orig} vs {back}");
        }
    }
}

#[test]
fn subset_keeps_samples_in_order() {
    let (tr, _) = generate(&DatasetSpec::ct_desk(4, 1, 5)).unwrap();
    let s = tr.subset(&[3, 1]).unwrap();
    assert_eq!(s.property::<f64>(0), tr.property::<f64>(3));
    assert_eq!(s.ids, vec![tr.ids[3], tr.ids[1]]);
    assert!(tr.subset(&[9]).is_err());
}

proptest! {
    #[test]
    fn normalization_round_trips_in_range_values(lo in -5e3f64..5e3, width in 1e-3f64..1e4, u in 0.0f64..=1.0) {
        let r = NormRecord { min: lo, max: lo + width };
        let x = lo + u * width;
        let y = r.normalize(x);
        prop_assert!((-1.0..=1.0).contains(&y));
        let back = r.denormalize(y);
        prop_assert!((back - x).abs() <= 8.0 * f64::EPSILON * lo.abs().max((lo + width).abs()));
    }
}
