use std::collections::BTreeSet;

use echoseg_core::par::Backend;
use echoseg_core::sim::{render_bursts, render_mask, BurstConfig, Position, Reflector, Scene};
use echoseg_core::{ArrayGeometry, DirectionalHeatMap, Image, Mask, PipelineConfig, Preprocessor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Side length images are resized to before any model-specific downscaling.
pub const CANONICAL_SIZE: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub n_scenes: usize,
    pub subjects: usize,
    pub rooms: usize,
    /// Person range bounds in metres, `[min, max)`.
    pub distance_m: [f64; 2],
    pub seed: u64,
    /// Final square side; must divide 128.
    pub image_size: usize,
    pub azimuth_span_deg: f64,
    pub polar_span_deg: f64,
    /// Angular radius of the smallest subject; subject `s` adds
    /// `s * extent_step_deg`.
    pub person_extent_deg: f64,
    pub extent_step_deg: f64,
    pub person_reflectivity: [f64; 2],
    pub background_reflectors: usize,
    pub background_range_m: [f64; 2],
    pub background_reflectivity: [f64; 2],
    pub noise_rms: f64,
    pub pipeline: PipelineConfig,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_scenes: 600,
            subjects: 6,
            rooms: 3,
            distance_m: [1.0, 3.0],
            seed: 0,
            image_size: CANONICAL_SIZE,
            azimuth_span_deg: 35.0,
            polar_span_deg: 45.0,
            person_extent_deg: 12.0,
            extent_step_deg: 0.4,
            person_reflectivity: [0.5, 1.0],
            background_reflectors: 4,
            background_range_m: [2.0, 3.4],
            background_reflectivity: [0.3, 1.0],
            noise_rms: 0.01,
            pipeline: PipelineConfig::default(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.n_scenes == 0 {
            return bad("n_scenes must be positive".into());
        }
        if self.subjects == 0 || self.rooms == 0 {
            return bad("need at least one subject and one room".into());
        }
        if self.n_scenes < self.subjects {
            return bad(format!("{} scenes cannot cover {} subjects", self.n_scenes, self.subjects));
        }
        let [lo, hi] = self.distance_m;
        if !(lo > 0.0 && hi > lo) {
            return bad(format!("invalid distance range {:?}", self.distance_m));
        }
        if self.image_size == 0 || CANONICAL_SIZE % self.image_size != 0 {
            return bad(format!("image_size {} must divide {CANONICAL_SIZE}", self.image_size));
        }
        for (name, [a, b]) in [
            ("person_reflectivity", self.person_reflectivity),
            ("background_reflectivity", self.background_reflectivity),
        ] {
            if !(0.0..=1.0).contains(&a) || !(a..=1.0).contains(&b) {
                return bad(format!("{name} must be an increasing pair in [0, 1]"));
            }
        }
        let [blo, bhi] = self.background_range_m;
        if !(blo > 0.0 && bhi >= blo) {
            return bad(format!("invalid background range {:?}", self.background_range_m));
        }
        if !(self.person_extent_deg > 0.0 && self.extent_step_deg >= 0.0) {
            return bad("person extent must be positive".into());
        }
        Ok(())
    }

    pub fn subject_extent_deg(&self, subject: usize) -> f64 {
        self.person_extent_deg + subject as f64 * self.extent_step_deg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub subject_id: usize,
    pub room_id: usize,
    pub distance_m: f64,
    pub motion_tag: String,
    pub azimuth_deg: f64,
    pub polar_deg: f64,
}

impl SampleMeta {
    /// 1 m distance band, e.g. `"1-2m"`.
    pub fn distance_band(&self) -> String {
        let lo = self.distance_m.floor().max(0.0) as u32;
        format!("{}-{}m", lo, lo + 1)
    }
}

/// Model input, target mask and metadata; image and mask share a square size.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub image: Image,
    pub mask: Mask,
    pub meta: SampleMeta,
}

impl SampleRecord {
    pub fn size(&self) -> usize {
        self.image.width
    }
}

const MOTION_TAGS: [&str; 3] = ["standing", "walking", "sitting"];

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Room `r`'s static reflectors, independent of everything but the seed.
pub fn room_background(spec: &DatasetSpec, room: usize) -> Vec<Reflector> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0000_0000 ^ room as u64);
    (0..spec.background_reflectors)
        .map(|_| Reflector {
            center: Position {
                range_m: uniform(&mut rng, spec.background_range_m),
                azimuth_deg: rng.random_range(-40.0..40.0),
                polar_deg: rng.random_range(-55.0..55.0),
            },
            extent_deg: 0.0,
            reflectivity: uniform(&mut rng, spec.background_reflectivity),
        })
        .collect()
}

/// One scene draw: the person plus the room's background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePlan {
    pub scene: Scene,
    pub meta: SampleMeta,
    pub noise_seed: u64,
}

/// Draws every scene of the dataset. Subjects are assigned round-robin so
/// each gets an equal share.
pub fn plan_scenes(spec: &DatasetSpec) -> Result<Vec<ScenePlan>> {
    spec.validate()?;
    let backgrounds: Vec<Vec<Reflector>> = (0..spec.rooms).map(|r| room_background(spec, r)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.n_scenes)
        .map(|i| {
            let subject = i % spec.subjects;
            let room = rng.random_range(0..spec.rooms);
            let distance = uniform(&mut rng, spec.distance_m);
            let azimuth = rng.random_range(-spec.azimuth_span_deg..=spec.azimuth_span_deg);
            let polar = rng.random_range(-spec.polar_span_deg..=spec.polar_span_deg);
            let reflectivity = uniform(&mut rng, spec.person_reflectivity);
            let motion = MOTION_TAGS[rng.random_range(0..MOTION_TAGS.len())];
            let noise_seed = rng.random();
            let person = Reflector {
                center: Position {
                    range_m: distance,
                    azimuth_deg: azimuth,
                    polar_deg: polar,
                },
                extent_deg: spec.subject_extent_deg(subject),
                reflectivity,
            };
            let scene = Scene {
                reflectors: vec![person],
                noise_rms: spec.noise_rms,
                static_background: backgrounds[room].clone(),
            };
            scene.validate()?;
            Ok(ScenePlan {
                scene,
                meta: SampleMeta {
                    subject_id: subject,
                    room_id: room,
                    distance_m: distance,
                    motion_tag: motion.to_string(),
                    azimuth_deg: azimuth,
                    polar_deg: polar,
                },
                noise_seed,
            })
        })
        .collect()
}

/// Person-free scene for a room, used to record the reference.
pub fn reference_scene(spec: &DatasetSpec, room: usize) -> Scene {
    Scene {
        reflectors: Vec::new(),
        noise_rms: spec.noise_rms,
        static_background: room_background(spec, room),
    }
}

pub fn reference_seed(spec: &DatasetSpec, room: usize) -> u64 {
    spec.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (0xabcd_0000 + room as u64)
}

/// Grid-resolution ultrasound image → `size × size` via the canonical
/// 128 × 128 resize.
pub fn resize_image(img: &Image, size: usize) -> Result<Image> {
    let canonical = img.resize_bilinear(CANONICAL_SIZE, CANONICAL_SIZE);
    if size == CANONICAL_SIZE {
        return Ok(canonical);
    }
    Ok(canonical.downscale_area(CANONICAL_SIZE / size)?)
}

pub fn resize_mask(mask: &Mask, size: usize) -> Mask {
    mask.resize(size, size)
}

/// Renders, beamforms and resizes every planned scene.
pub fn build_synthetic_dataset(spec: &DatasetSpec, backend: Backend) -> Result<Vec<SampleRecord>> {
    let plans = plan_scenes(spec)?;
    let geometry = ArrayGeometry::default();
    let pre = Preprocessor::new(spec.pipeline.clone(), geometry.clone(), backend)?;
    let burst: &BurstConfig = &spec.pipeline.burst;

    let references: Vec<Vec<DirectionalHeatMap>> = (0..spec.rooms)
        .map(|room| {
            let rec = render_bursts(&reference_scene(spec, room), &geometry, burst, 1, reference_seed(spec, room))?;
            pre.reference_maps(&rec)
        })
        .collect::<Result<_, echoseg_core::Error>>()?;

    // Samples are independent; the inner pipeline runs sequentially so the
    // outer loop is the only parallel level.
    let inner = Preprocessor {
        backend: Backend::Sequential,
        ..pre.clone()
    };
    let records = backend.map_range(plans.len(), |i| -> Result<SampleRecord> {
        let plan = &plans[i];
        let rec = render_bursts(&plan.scene, &geometry, burst, 1, plan.noise_seed)?;
        let images = inner.images(&rec, &references[plan.meta.room_id])?;
        let image = resize_image(&images[0].to_image(), spec.image_size)?;
        let mask = resize_mask(&render_mask(&plan.scene, &inner.grid), spec.image_size);
        Ok(SampleRecord {
            image,
            mask,
            meta: plan.meta.clone(),
        })
    });
    records.into_iter().collect()
}

pub fn subjects(records: &[SampleRecord]) -> BTreeSet<usize> {
    records.iter().map(|r| r.meta.subject_id).collect()
}
