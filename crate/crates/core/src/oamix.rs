//! OA-Mix: multi-level region transforms blended with the original image
//! using saliency-conditioned mixing weights.
//!
//! A sample is partitioned into one `Image` region, one `Foreground` region per
//! annotation and a few `RandomBox` regions. Each pixel belongs to exactly one
//! region, chosen by precedence `Foreground > RandomBox > Image` (ties at the
//! same level go to the smaller box, then the earlier region). Every region
//! gets its own transform chain, applied to a copy of the original, and its
//! own mixing weight `m`:
//!
//! ```text
//! out[p] = m_P * aug_P[p] + (1 - m_P) * orig[p]     for p owned by P
//! ```
//!
//! Regions whose saliency score is below the threshold draw `m` from a
//! distribution skewed towards zero, so weak objects keep more of the
//! original signal. Annotations are copied untouched.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Annotation, BBox, ImageBuffer, SampleRecord};
use crate::saliency::{object_saliency_score, spectral_residual_map, SaliencyConfig, SaliencyMap};
use crate::transforms::{apply_chain_in_place, sample_chain, TransformChain, TransformConfig};

pub use crate::transforms::RegionLevel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub level: RegionLevel,
    pub rect: BBox,
    /// Mean saliency under `rect`.
    pub saliency: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub class_id: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixPlan {
    pub regions: Vec<Region>,
    pub chains: Vec<TransformChain>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OamixOutput {
    pub image: ImageBuffer,
    pub annotations: Vec<Annotation>,
    pub plan: MixPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OamixConfig {
    pub saliency: SaliencyConfig,
    pub transform: TransformConfig,
    /// Regions scoring at least this much use `high_beta`, others `low_beta`.
    pub saliency_threshold: f64,
    pub high_beta: [f64; 2],
    pub low_beta: [f64; 2],
    /// Inclusive bounds on the number of random boxes.
    pub random_boxes: [usize; 2],
    /// Bounds on each random-box side, as a fraction of the image side.
    pub random_box_frac: [f64; 2],
    /// Replace every sampled weight by this value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub force_weight: Option<f64>,
    /// Replace every sampled chain by the identity chain.
    pub force_identity_chain: bool,
}

impl Default for OamixConfig {
    fn default() -> Self {
        Self {
            saliency: SaliencyConfig::default(),
            transform: TransformConfig::default(),
            saliency_threshold: 0.4,
            high_beta: [1.0, 1.0],
            low_beta: [1.0, 4.0],
            random_boxes: [1, 3],
            random_box_frac: [0.1, 0.4],
            force_weight: None,
            force_identity_chain: false,
        }
    }
}

impl OamixConfig {
    pub fn validate(&self) -> Result<()> {
        self.transform.validate()?;
        let beta_ok = |b: [f64; 2]| b.iter().all(|v| v.is_finite() && *v > 0.0);
        if !beta_ok(self.high_beta) || !beta_ok(self.low_beta) {
            return Err(Error::Config("oamix beta parameters must be > 0".into()));
        }
        let [lo, hi] = self.random_box_frac;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config("oamix.random_box_frac must satisfy 0 < lo <= hi <= 1".into()));
        }
        if self.random_boxes[0] > self.random_boxes[1] {
            return Err(Error::Config("oamix.random_boxes lower bound exceeds upper".into()));
        }
        if let Some(m) = self.force_weight {
            if !(0.0..=1.0).contains(&m) {
                return Err(Error::Config("oamix.force_weight must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Splits an image into the Image region, one Foreground region per
/// annotation and `k` random boxes. Saliency scores are left at zero.
pub fn partition_regions<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    annotations: &[Annotation],
    rng: &mut R,
    cfg: &OamixConfig,
) -> Vec<Region> {
    let mut regions = vec![Region {
        level: RegionLevel::Image,
        rect: BBox::new(0, 0, width as u32, height as u32),
        saliency: 0.0,
        class_id: None,
    }];
    regions.extend(annotations.iter().map(|a| Region {
        level: RegionLevel::Foreground,
        rect: a.bbox,
        saliency: 0.0,
        class_id: Some(a.class_id),
    }));
    let [kmin, kmax] = cfg.random_boxes;
    let k = rng.random_range(kmin..=kmax);
    let [flo, fhi] = cfg.random_box_frac;
    let side = |rng: &mut R, dim: usize| -> u32 {
        let frac = if fhi > flo { rng.random_range(flo..=fhi) } else { flo };
        ((frac * dim as f64).round() as u32).clamp(1, dim as u32)
    };
    for _ in 0..k {
        let w = side(rng, width);
        let h = side(rng, height);
        let x = rng.random_range(0..=width as u32 - w);
        let y = rng.random_range(0..=height as u32 - h);
        regions.push(Region {
            level: RegionLevel::RandomBox,
            rect: BBox::new(x, y, w, h),
            saliency: 0.0,
            class_id: None,
        });
    }
    regions
}

/// Index of the region owning each pixel (row-major).
pub fn precedence_owner(regions: &[Region], width: usize, height: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..regions.len()).collect();
    // Lowest precedence first; later writes win.
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&regions[a], &regions[b]);
        ra.level
            .cmp(&rb.level)
            .then(rb.rect.area().cmp(&ra.rect.area()))
            .then(b.cmp(&a))
    });
    let mut owner = vec![usize::MAX; width * height];
    for i in order {
        let r = regions[i].rect;
        for y in r.y as usize..(r.bottom() as usize).min(height) {
            for x in r.x as usize..(r.right() as usize).min(width) {
                owner[y * width + x] = i;
            }
        }
    }
    owner
}

/// Draws the mixing weight for a region with saliency score `s`.
pub fn sample_mixing_weight<R: Rng + ?Sized>(s: f64, rng: &mut R, cfg: &OamixConfig) -> f64 {
    let [a, b] = if s >= cfg.saliency_threshold { cfg.high_beta } else { cfg.low_beta };
    let beta = Beta::new(a, b).expect("beta parameters validated");
    beta.sample(rng)
}

/// `m * aug + (1 - m) * orig`, kept inside the closed interval spanned by the two.
#[inline]
pub fn mix_pixel(orig: f32, aug: f32, m: f64) -> f32 {
    let v = m * aug as f64 + (1.0 - m) * orig as f64;
    let (lo, hi) = if orig <= aug { (orig, aug) } else { (aug, orig) };
    v.clamp(lo as f64, hi as f64) as f32
}

/// Runs OA-Mix on `sample`, computing its saliency map first.
pub fn oamix<R: Rng + ?Sized>(
    sample: &SampleRecord,
    rng: &mut R,
    cfg: &OamixConfig,
) -> Result<OamixOutput> {
    let map = spectral_residual_map(&sample.image, &cfg.saliency)?;
    oamix_with_saliency(sample, &map, rng, cfg)
}

/// Runs OA-Mix with a precomputed saliency map of the original image.
pub fn oamix_with_saliency<R: Rng + ?Sized>(
    sample: &SampleRecord,
    map: &SaliencyMap,
    rng: &mut R,
    cfg: &OamixConfig,
) -> Result<OamixOutput> {
    let orig = &sample.image;
    let (w, h) = (orig.width(), orig.height());
    if map.width != w || map.height != h {
        return Err(Error::DimMismatch("saliency map does not match image".into()));
    }
    let mut regions = partition_regions(w, h, &sample.annotations, rng, cfg);
    let mut chains = Vec::with_capacity(regions.len());
    let mut weights = Vec::with_capacity(regions.len());
    for region in regions.iter_mut() {
        region.saliency = object_saliency_score(map, &region.rect)?;
        let chain = sample_chain(rng, region.level, &cfg.transform);
        let m = sample_mixing_weight(region.saliency, rng, cfg);
        chains.push(if cfg.force_identity_chain { TransformChain::identity() } else { chain });
        weights.push(cfg.force_weight.unwrap_or(m));
    }

    let owner = precedence_owner(&regions, w, h);
    let mut out = orig.clone();
    for (i, region) in regions.iter().enumerate() {
        let mut aug = orig.clone();
        apply_chain_in_place(&mut aug, &region.rect, &chains[i]);
        let m = weights[i];
        let r = region.rect;
        for y in r.y as usize..r.bottom() as usize {
            for x in r.x as usize..r.right() as usize {
                if owner[y * w + x] != i {
                    continue;
                }
                let k = orig.index(x, y);
                for c in 0..3 {
                    out.data_mut()[k + c] = mix_pixel(orig.data()[k + c], aug.data()[k + c], m);
                }
            }
        }
    }

    Ok(OamixOutput {
        image: out,
        annotations: sample.annotations.clone(),
        plan: MixPlan { regions, chains, weights },
    })
}

/// The per-region transformed images, for auditing convexity.
pub fn region_augmentations(sample: &SampleRecord, plan: &MixPlan) -> Vec<ImageBuffer> {
    plan.regions
        .iter()
        .zip(&plan.chains)
        .map(|(region, chain)| {
            let mut aug = sample.image.clone();
            apply_chain_in_place(&mut aug, &region.rect, chain);
            aug
        })
        .collect()
}
