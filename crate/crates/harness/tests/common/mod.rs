#![allow(dead_code)]

use echoseg_core::{Image, Mask};
use echoseg_harness::{DatasetSpec, SampleMeta, SampleRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Bright square on a dim background with the square as its mask. Cheap
/// stand-in for beamformed samples when only the plumbing is under test.
pub fn blob_records(n: usize, subjects: usize, size: usize, seed: u64) -> Vec<SampleRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let side = size / 4;
            let (x0, y0) = (rng.random_range(0..size - side), rng.random_range(0..size - side));
            let mut img = vec![0.0f32; size * size];
            let mut mask = vec![0u8; size * size];
            for y in 0..size {
                for x in 0..size {
                    let inside = (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y);
                    img[y * size + x] = if inside { 0.9 } else { rng.random_range(0.0..0.2) };
                    mask[y * size + x] = u8::from(inside);
                }
            }
            SampleRecord {
                image: Image::new(size, size, img).unwrap(),
                mask: Mask::new(size, size, mask).unwrap(),
                meta: SampleMeta {
                    subject_id: i % subjects,
                    room_id: i % 3,
                    distance_m: 1.0 + (i % 4) as f64 * 0.5,
                    motion_tag: "standing".into(),
                    azimuth_deg: 0.0,
                    polar_deg: 0.0,
                },
            }
        })
        .collect()
}

/// Small beamformed dataset at 32×32.
pub fn small_spec(n_scenes: usize) -> DatasetSpec {
    DatasetSpec {
        n_scenes,
        image_size: 32,
        ..DatasetSpec::default()
    }
}
