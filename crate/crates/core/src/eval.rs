//! Segmentation-overlap evaluation: Dice, plurality voting, the atlas-space,
//! image-space and atlas-as-a-bridge measures, and fold counting.
//!
//! Label 0 is background; structures are labels `1..=K`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{jacobian_determinant, warp_labels, DeformationMap, LabelField};
use crate::scalar::Real;
use crate::svf::compose;

/// Dice overlap of structure `k`; 1.0 when both are empty.
pub fn dice(a: &LabelField, b: &LabelField, k: u32) -> Result<f64> {
    a.shape().ensure_same(b.shape(), "dice")?;
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.labels().iter().zip(b.labels()) {
        let (ia, ib) = (x == k, y == k);
        na += ia as usize;
        nb += ib as usize;
        both += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Per-voxel most frequent label; ties go to the smallest label.
pub fn plurality_vote(segs: &[LabelField]) -> Result<LabelField> {
    let first = segs
        .first()
        .ok_or_else(|| Error::invalid("plurality_vote: empty list"))?;
    for s in segs {
        first.shape().ensure_same(s.shape(), "plurality_vote")?;
    }
    let k = segs.iter().map(|s| s.num_structures()).max().unwrap_or(0) as usize;
    let labels: Vec<u32> = (0..first.labels().len())
        .into_par_iter()
        .with_min_len(1024)
        .map_init(
            || vec![0usize; k + 1],
            |counts, x| {
                counts.iter_mut().for_each(|c| *c = 0);
                for s in segs {
                    counts[s.labels()[x] as usize] += 1;
                }
                let mut best = 0usize;
                for (label, &c) in counts.iter().enumerate() {
                    if c > counts[best] {
                        best = label;
                    }
                }
                best as u32
            },
        )
        .collect();
    LabelField::new(first.shape().clone(), labels, k as u32)
}

/// Number of interior voxels whose Jacobian determinant is negative.
pub fn count_folds<T: Real>(map: &DeformationMap<T>) -> usize {
    let det = jacobian_determinant(map);
    map.shape()
        .interior_indices(1)
        .into_iter()
        .filter(|&i| det.values()[i] < T::zero())
        .count()
}

/// Dice scores of one measure: one row per sample (image, target, or pair),
/// one column per structure `1..=K`.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureScores {
    pub measure: String,
    pub scores: Vec<Vec<f64>>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

impl StructureScores {
    pub fn num_structures(&self) -> usize {
        self.scores.first().map_or(0, Vec::len)
    }

    /// Mean and population standard deviation of structure `k` over samples.
    pub fn stats(&self, k: u32) -> (f64, f64) {
        let c = k as usize - 1;
        mean_std(self.scores.iter().map(move |row| row[c]))
    }

    /// Structures averaged per sample first, then mean and std over samples.
    pub fn group_stats(&self, structures: &[u32]) -> (f64, f64) {
        mean_std(self.scores.iter().map(move |row| {
            structures.iter().map(|&k| row[k as usize - 1]).sum::<f64>() / structures.len() as f64
        }))
    }
}

fn structure_row(a: &LabelField, b: &LabelField, k: u32) -> Result<Vec<f64>> {
    (1..=k).map(|s| dice(a, b, s)).collect()
}

fn num_structures(segs: &[LabelField]) -> u32 {
    segs.iter().map(|s| s.num_structures()).max().unwrap_or(0)
}

fn check_counts<T>(segs: &[LabelField], maps: &[DeformationMap<T>], what: &str) -> Result<()> {
    if segs.is_empty() {
        return Err(Error::invalid(format!("{what}: no segmentations")));
    }
    if segs.len() != maps.len() {
        return Err(Error::invalid(format!(
            "{what}: {} segmentations but {} maps",
            segs.len(),
            maps.len()
        )));
    }
    Ok(())
}

fn pull_to_atlas<T: Real>(segs: &[LabelField], fwd_maps: &[DeformationMap<T>]) -> Result<Vec<LabelField>> {
    segs.par_iter()
        .zip(fwd_maps.par_iter())
        .map(|(s, m)| warp_labels(s, m))
        .collect()
}

/// Dice of every atlas-space segmentation `S_i∘Φ_{0,1}` against their plurality vote.
pub fn eval_atlas_space<T: Real>(segs: &[LabelField], fwd_maps: &[DeformationMap<T>]) -> Result<StructureScores> {
    check_counts(segs, fwd_maps, "eval_atlas_space")?;
    let k = num_structures(segs);
    let warped = pull_to_atlas(segs, fwd_maps)?;
    let consensus = plurality_vote(&warped)?;
    let scores = warped
        .par_iter()
        .map(|w| structure_row(w, &consensus, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(StructureScores {
        measure: "d_atlas".into(),
        scores,
    })
}

/// Pairwise atlas-space Dice over all `i < j`, without a consensus.
pub fn eval_atlas_space_pairwise<T: Real>(
    segs: &[LabelField],
    fwd_maps: &[DeformationMap<T>],
) -> Result<StructureScores> {
    check_counts(segs, fwd_maps, "eval_atlas_space_pairwise")?;
    if segs.len() < 2 {
        return Err(Error::invalid("pairwise atlas-space Dice needs at least 2 segmentations"));
    }
    let k = num_structures(segs);
    let warped = pull_to_atlas(segs, fwd_maps)?;
    let pairs: Vec<(usize, usize)> = (0..segs.len())
        .flat_map(|i| (i + 1..segs.len()).map(move |j| (i, j)))
        .collect();
    let scores = pairs
        .par_iter()
        .map(|&(i, j)| structure_row(&warped[i], &warped[j], k))
        .collect::<Result<Vec<_>>>()?;
    Ok(StructureScores {
        measure: "d_atlas_pairwise".into(),
        scores,
    })
}

/// Dice of the atlas segmentation carried to each image (`𝓢∘Φ_{1,0}`) against `S_i`.
pub fn eval_image_space<T: Real>(
    atlas_seg: &LabelField,
    segs: &[LabelField],
    inv_maps: &[DeformationMap<T>],
) -> Result<StructureScores> {
    check_counts(segs, inv_maps, "eval_image_space")?;
    let k = num_structures(segs).max(atlas_seg.num_structures());
    let scores = segs
        .par_iter()
        .zip(inv_maps.par_iter())
        .map(|(s, m)| structure_row(&warp_labels(atlas_seg, m)?, s, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(StructureScores {
        measure: "d_image".into(),
        scores,
    })
}

/// Atlas-as-a-bridge Dice: for each target `j`, every other `S_i` is resampled
/// once through `Φ^i_{0,1} ∘ Φ^j_{1,0}`, the results are voted, and the vote is
/// scored against `S_j`.
pub fn eval_bridge<T: Real>(
    segs: &[LabelField],
    fwd_maps: &[DeformationMap<T>],
    inv_maps: &[DeformationMap<T>],
) -> Result<StructureScores> {
    check_counts(segs, fwd_maps, "eval_bridge")?;
    check_counts(segs, inv_maps, "eval_bridge")?;
    if segs.len() < 2 {
        return Err(Error::invalid("eval_bridge needs at least 2 segmentations"));
    }
    let k = num_structures(segs);
    let scores = (0..segs.len())
        .into_par_iter()
        .map(|j| {
            let carried = (0..segs.len())
                .filter(|&i| i != j)
                .map(|i| warp_labels(&segs[i], &compose(&fwd_maps[i], &inv_maps[j])?))
                .collect::<Result<Vec<_>>>()?;
            structure_row(&plurality_vote(&carried)?, &segs[j], k)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StructureScores {
        measure: "d_bridge".into(),
        scores,
    })
}

/// Which measures [`evaluate`] computes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    pub pairwise_atlas: bool,
    pub image_space: bool,
}

/// All requested measures plus the fold summary.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub measures: Vec<StructureScores>,
    /// Mean fold count per `Φ_{1,0}` map.
    pub folds: f64,
    /// True when the atlas segmentation for `d_image` came from voting warped training labels.
    pub atlas_seg_voted: bool,
}

/// Header of the CSV emitted by [`EvalReport::to_csv`].
pub const EVAL_HEADER: &str = "structure,measure,mean,std";

impl EvalReport {
    pub fn measure(&self, name: &str) -> Option<&StructureScores> {
        self.measures.iter().find(|m| m.measure == name)
    }

    /// One row per structure and measure, then an `all` row per measure
    /// (structures averaged per sample first), then the fold summary.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(EVAL_HEADER);
        out.push('\n');
        for m in &self.measures {
            let k = m.num_structures() as u32;
            let name = if m.measure == "d_image" && self.atlas_seg_voted {
                "d_image_voted_atlas_seg".to_string()
            } else {
                m.measure.clone()
            };
            for s in 1..=k {
                let (mean, std) = m.stats(s);
                out.push_str(&format!("{s},{name},{mean},{std}\n"));
            }
            let all: Vec<u32> = (1..=k).collect();
            let (mean, std) = m.group_stats(&all);
            out.push_str(&format!("all_per_sample_first,{name},{mean},{std}\n"));
        }
        out.push_str(&format!("folds,mean_per_map,{},0\n", self.folds));
        out
    }
}

/// Computes d_atlas, d_bridge, and optionally the pairwise d_atlas and d_image.
///
/// Without `atlas_seg`, d_image uses the vote of the atlas-space training labels.
pub fn evaluate<T: Real>(
    segs: &[LabelField],
    fwd_maps: &[DeformationMap<T>],
    inv_maps: &[DeformationMap<T>],
    atlas_seg: Option<&LabelField>,
    options: EvalOptions,
) -> Result<EvalReport> {
    let mut measures = vec![eval_atlas_space(segs, fwd_maps)?];
    if options.pairwise_atlas {
        measures.push(eval_atlas_space_pairwise(segs, fwd_maps)?);
    }
    let mut voted = false;
    if options.image_space {
        let seg = match atlas_seg {
            Some(s) => s.clone(),
            None => {
                voted = true;
                plurality_vote(&pull_to_atlas(segs, fwd_maps)?)?
            }
        };
        measures.push(eval_image_space(&seg, segs, inv_maps)?);
    }
    measures.push(eval_bridge(segs, fwd_maps, inv_maps)?);
    let folds = inv_maps.iter().map(|m| count_folds(m) as f64).sum::<f64>() / inv_maps.len().max(1) as f64;
    Ok(EvalReport {
        measures,
        folds,
        atlas_seg_voted: voted,
    })
}
