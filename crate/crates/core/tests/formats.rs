use otoar_core::synth::synth_generate;
use otoar_core::volume::{load_volume, save_volume};
use otoar_core::{Case, Laterality, LandmarkSet, Volume};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn volume_round_trip_is_bitwise(
        w in 1usize..8, h in 1usize..8, d in 1usize..8,
        seed in any::<u64>(), left in any::<bool>(),
    ) {
        let n = w * h * d;
        let data: Vec<i16> = (0..n).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 48) as i16).collect();
        let lat = if left { Laterality::Left } else { Laterality::Right };
        let mut volume = Volume::new("v", [w, h, d], [0.3, 0.25, 0.6], lat, data).unwrap();
        volume.crop_offset = Some([1, 2, 3]);
        let case = Case {
            volume,
            landmarks: LandmarkSet::new([[0.3 * (w - 1) as f64, 0.7 * (h - 1) as f64, 0.1 * (d - 1) as f64]; 7]),
            patient: "p".into(),
            roi_corner: Some([0, 1, 0]),
        };
        let dir = tempfile::tempdir().unwrap();
        let back = load_volume(&save_volume(&case, dir.path(), "v").unwrap()).unwrap();
        prop_assert_eq!(back, case);
    }
}

#[test]
fn synthetic_case_round_trip() {
    let case = synth_generate(1, [16, 16, 16], [0.3, 0.3, 0.6], 0).unwrap().remove(0);
    let dir = tempfile::tempdir().unwrap();
    let back = load_volume(&save_volume(&case, dir.path(), "case").unwrap()).unwrap();
    assert_eq!(back.volume.data(), case.volume.data());
    assert_eq!(back, case);
}
