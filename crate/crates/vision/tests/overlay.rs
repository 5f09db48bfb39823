use otoar_vision::overlay::{decode_ppm, draw_dot, draw_segment, encode_ppm};
use otoar_vision::RgbImage;
use proptest::prelude::*;

const RED: [u8; 3] = [255, 0, 0];

fn painted(img: &RgbImage) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..img.height {
        for x in 0..img.width {
            if img.pixel(x, y) != [0, 0, 0] {
                out.push((x, y));
            }
        }
    }
    out
}

#[test]
fn unit_dot_is_a_plus_sign() {
    let mut img = RgbImage::new(11, 11);
    draw_dot(&mut img, [5.0, 5.0], 1.0, RED);
    assert_eq!(painted(&img), vec![(5, 4), (4, 5), (5, 5), (6, 5), (5, 6)]);
}

#[test]
fn horizontal_line_covers_three_rows() {
    let mut img = RgbImage::new(64, 64);
    draw_segment(&mut img, [[0.0, 10.0], [63.0, 10.0]], 2.0, RED);
    let p = painted(&img);
    assert_eq!(p.len(), 3 * 64);
    assert!(p.iter().all(|&(_, y)| (9..=11).contains(&y)));
    assert!(p.iter().all(|&(x, y)| img.pixel(x, y) == RED));
}

#[test]
fn dot_matches_distance_oracle() {
    let mut img = RgbImage::new(20, 20);
    let (c, r) = ([7.3, 9.6], 3.0);
    draw_dot(&mut img, c, r, RED);
    for y in 0..20 {
        for x in 0..20 {
            let inside = (x as f64 - c[0]).hypot(y as f64 - c[1]) <= r;
            assert_eq!(img.pixel(x, y) == RED, inside, "({x}, {y})");
        }
    }
}

proptest! {
    #[test]
    fn ppm_round_trip(w in 1usize..16, h in 1usize..16, seed in any::<u64>()) {
        let mut img = RgbImage::new(w, h);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (seed.wrapping_mul(i as u64 + 1) >> 7) as u8;
        }
        prop_assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
    }
}
