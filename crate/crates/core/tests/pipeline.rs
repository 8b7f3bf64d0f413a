use proptest::prelude::*;

use zonal_core::data::{
    augment, central_crop_mm, generate_phantom, list_cases, load_case, load_volume, prepare_case, save_volume,
    write_phantom_dataset, AugmentSpec, Volume, Voxels, DEFAULT_CROP_MM,
};
use zonal_core::metrics::{
    categorize_slice, dsc, stratified_report, LabelMask, SegReport, SliceCategory, Subset, Zone, PZ_LABEL, TZ_LABEL,
};
use zonal_core::Error;

fn masks() -> impl Strategy<Value = (Vec<LabelMask>, Vec<LabelMask>)> {
    (1usize..4, 1usize..10, 1usize..10).prop_flat_map(|(n, w, h)| {
        let one = prop::collection::vec(prop::collection::vec(0u8..3, w * h), n)
            .prop_map(move |v| v.into_iter().map(|l| LabelMask::new(w, h, l).unwrap()).collect::<Vec<_>>());
        (one.clone(), one)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dsc_is_a_symmetric_fraction((a, b) in masks()) {
        for zone in Zone::ALL {
            let d = dsc(&a, &b, zone).unwrap();
            prop_assert_eq!(d, dsc(&b, &a, zone).unwrap());
            if let Some(v) = d {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn slice_subsets_partition_prostate_slices((truth, _) in masks()) {
        for m in &truth {
            let c = categorize_slice(m);
            let strata = [Subset::BaseEnd, Subset::Middle, Subset::ApexEnd].iter().filter(|s| s.contains(c)).count();
            prop_assert_eq!(strata, usize::from(c != SliceCategory::NonProstate));
            prop_assert_eq!(Subset::ProstateSlices.contains(c), c != SliceCategory::NonProstate);
            prop_assert!(Subset::AllSlices.contains(c));
        }
    }

    #[test]
    fn augmentation_keeps_labels_and_is_seeded(seed in any::<u64>()) {
        let (image, mask) = generate_phantom(3, 6, 32).unwrap();
        let plane = image.image_slice(3).unwrap();
        let m = mask.mask_slice(3).unwrap();
        let spec = AugmentSpec::default().with_seed(seed);
        let (a_img, a_mask) = augment(&plane, &m, &spec).unwrap();
        let (b_img, b_mask) = augment(&plane, &m, &spec).unwrap();
        prop_assert_eq!(&a_img, &b_img);
        prop_assert_eq!(&a_mask, &b_mask);
        prop_assert!(a_mask.labels().iter().all(|&l| l <= TZ_LABEL));
    }
}

#[test]
fn identity_augmentation_changes_nothing() {
    let (image, mask) = generate_phantom(1, 6, 32).unwrap();
    let plane = image.image_slice(2).unwrap();
    let m = mask.mask_slice(2).unwrap();
    let (img, out) = augment(&plane, &m, &AugmentSpec::identity().with_seed(9)).unwrap();
    assert_eq!(img, plane);
    assert_eq!(out, m);
}

#[test]
fn phantom_slices_run_base_to_apex_with_visible_zones() {
    let size = 192;
    for seed in 0..100 {
        let (_, mask) = generate_phantom(seed, 20, size).unwrap();
        let slices = mask.mask_slices().unwrap();
        let cats: Vec<SliceCategory> = slices.iter().map(categorize_slice).collect();
        let rank = |c: &SliceCategory| match c {
            SliceCategory::BaseEnd => 0,
            SliceCategory::Middle => 1,
            SliceCategory::ApexEnd => 2,
            SliceCategory::NonProstate => unreachable!(),
        };
        let prostate: Vec<usize> =
            cats.iter().enumerate().filter(|(_, c)| **c != SliceCategory::NonProstate).map(|(i, _)| i).collect();
        let (first, last) = (prostate[0], *prostate.last().unwrap());
        assert_eq!(prostate.len(), last - first + 1, "seed {seed}: gap in {cats:?}");
        assert!(first > 0 && last < 19, "seed {seed}: no non-prostate margin in {cats:?}");
        let ranks: Vec<usize> = prostate.iter().map(|&i| rank(&cats[i])).collect();
        assert!(ranks.windows(2).all(|w| w[0] <= w[1]), "seed {seed}: {cats:?}");
        assert_eq!(ranks.first(), Some(&0));
        assert_eq!(ranks.last(), Some(&2));
        assert!(ranks.contains(&1));
        for (m, c) in slices.iter().zip(&cats) {
            if *c == SliceCategory::Middle {
                for zone in Zone::ALL {
                    assert!(m.count(zone) * 100 >= size * size, "seed {seed}: {zone:?} under 1% on a middle slice");
                }
            }
        }
    }
}

#[test]
fn volume_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let (image, mask) = generate_phantom(4, 6, 40).unwrap();
    for (vol, name) in [(&image, "img"), (&mask, "mask")] {
        let path = dir.path().join(name);
        save_volume(vol, &path).unwrap();
        assert_eq!(&load_volume(&path).unwrap(), vol);
    }
    std::fs::write(dir.path().join("img.raw"), [0u8; 10]).unwrap();
    assert!(matches!(load_volume(&dir.path().join("img")), Err(Error::Corrupt { .. })));
    assert!(load_volume(&dir.path().join("missing")).is_err());
}

#[test]
fn invalid_labels_are_rejected() {
    assert!(LabelMask::new(2, 1, vec![0, 3]).is_err());
    assert!(Volume::new(2, 1, 1, [1.0, 1.0, 1.0], Voxels::U8(vec![0, 4])).is_err());
    assert!(Volume::new(2, 2, 1, [1.0, 1.0, 1.0], Voxels::U16(vec![0; 3])).is_err());
}

#[test]
fn dataset_lists_sorted_cases_and_prepares_them() {
    let dir = tempfile::tempdir().unwrap();
    write_phantom_dataset(dir.path(), 3, 7, 6, 64, true).unwrap();
    let paths = list_cases(dir.path()).unwrap();
    let ids: Vec<_> = paths.iter().map(|p| p.id.clone()).collect();
    assert_eq!(ids, ["case000", "case001", "case002"]);
    let case = load_case(&paths[1]).unwrap();
    assert!(case.mask.is_some() && case.reader2.is_some());

    let prepared = prepare_case(&case, 32, DEFAULT_CROP_MM).unwrap();
    assert_eq!(prepared.images.len(), 6);
    assert!(prepared.images.iter().all(|p| p.len() == 32 * 32));
    let masks = prepared.masks.as_ref().unwrap();
    let restored = prepared.restore_mask(&masks[3]).unwrap();
    assert_eq!((restored.width(), restored.height()), (64, 64));
    // Nearest-neighbour round trip through the crop keeps the zones.
    let truth = case.mask.as_ref().unwrap().mask_slice(3).unwrap();
    for zone in Zone::ALL {
        let d = dsc(std::slice::from_ref(&restored), std::slice::from_ref(&truth), zone).unwrap().unwrap();
        assert!(d > 0.85, "{zone:?}: {d}");
    }
    assert!(prepare_case(&case, 30, DEFAULT_CROP_MM).is_err());
}

#[test]
fn crop_is_centred_and_sized_in_millimetres() {
    let (image, _) = generate_phantom(0, 6, 192).unwrap();
    let (cropped, window) = central_crop_mm(&image, DEFAULT_CROP_MM).unwrap();
    assert_eq!((cropped.width(), cropped.height()), (186, 186));
    assert_eq!((window.x0, window.y0), (3, 3));
    assert!(central_crop_mm(&image, 200.0).is_err());
}

#[test]
fn truth_against_itself_scores_one_and_background_scores_zero() {
    let (_, mask) = generate_phantom(8, 12, 64).unwrap();
    let truth = mask.mask_slices().unwrap();
    let row = stratified_report("p", &truth, &truth).unwrap();
    for zone in Zone::ALL {
        for subset in Subset::ALL {
            if let Some(v) = row.zone(zone).get(subset) {
                assert_eq!(v, 1.0);
            }
        }
    }
    let empty: Vec<LabelMask> = truth.iter().map(|m| LabelMask::zeros(m.width(), m.height())).collect();
    let row = stratified_report("p", &empty, &truth).unwrap();
    assert_eq!(row.pz.apex_end, Some(0.0));
    assert_eq!(row.tz.base_end, Some(0.0));
    assert_eq!(row.pz.base_end, None);
    assert_eq!(row.tz.prostate_slices, Some(0.0));

    let report = SegReport::new("background", vec![row.clone(), row]);
    let csv = report.to_csv();
    assert!(csv.starts_with("row,zone,all_slices,prostate_slices,base_end,middle,apex_end\n"));
    assert!(csv.contains("mean±sd,PZ,0.00±0.00,0.00±0.00,NA,0.00±0.00,0.00±0.00"));
    let back: SegReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(back, report);
    let labels = [PZ_LABEL, TZ_LABEL];
    assert!(truth.iter().any(|m| labels.iter().all(|l| m.labels().contains(l))));
}
