use otoar_core::synth::{structure_field, synth_generate};

fn argmax(field: &[f64], dims: [usize; 3]) -> [usize; 3] {
    let i = field
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > field[best] { i } else { best });
    [i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1])]
}

#[test]
fn isolated_structure_peaks_at_stored_landmark() {
    let dims = [32, 32, 16];
    for case in synth_generate(40, dims, [0.3, 0.3, 0.6], 1).unwrap() {
        for (l, c) in case.landmarks.iter() {
            let peak = argmax(&structure_field(dims, l, c), dims);
            for a in 0..3 {
                assert!((peak[a] as f64 - c[a]).abs() <= 0.5, "{} {}: {peak:?} vs {c:?}", case.volume.id, l.key());
            }
        }
    }
}

#[test]
fn landmark_voxels_stand_out_from_background() {
    // background sits near -200; the weakest structure adds at least
    // 0.69 * 700 at the nearest voxel, far beyond the noise
    let dims = [32, 32, 16];
    for case in synth_generate(10, dims, [0.3, 0.3, 0.6], 5).unwrap() {
        for (l, c) in case.landmarks.iter() {
            let v = case.volume.get(c[0].round() as usize, c[1].round() as usize, c[2].round() as usize);
            assert!(v > 0, "{} {}: {v}", case.volume.id, l.key());
        }
    }
}
