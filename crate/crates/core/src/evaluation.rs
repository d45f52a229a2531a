//! The measurement stack: pixel-wise reconstruction loss at one and three
//! scales, the generative-loss verification distance, and the cumulative
//! match score protocol.
//!
//! PRL keeps its `1/(W·H)` normalizer *outside* the square root (an
//! unconventional placement, but the comparisons built on it only need
//! internal consistency):
//!
//! ```text
//! PRL = (1 / (W·H)) · sqrt( Σ_x Σ_y (GT(x,y) − P(x,y))² )
//! ```

use crate::data::{network_inputs, Dataset};
use crate::error::{Error, Result};
use crate::loss::pair_sqdist;
use crate::network::{forward, Network};
use crate::tensor::{resize_bilinear, Scalar, Tensor};

/// The three evaluation scales.
pub const MPRL_SCALES: [f64; 3] = [0.5, 1.0, 2.0];

/// Pixel-wise reconstruction loss between a ground-truth sketch and a
/// prediction of the same single-channel shape.
pub fn prl<T: Scalar>(gt: &Tensor<T>, pred: &Tensor<T>) -> Result<T> {
    if gt.channels() != 1 || pred.channels() != 1 {
        return Err(Error::Dimension(format!(
            "PRL compares single-channel images, got {:?} and {:?}",
            gt.shape(),
            pred.shape()
        )));
    }
    let sq = pair_sqdist(gt, pred)?;
    let norm = T::from_f64_lossy((gt.width() * gt.height()) as f64);
    Ok(sq.sqrt() / norm)
}

/// PRL after rescaling both images to 0.5×, 1× and 2×.
pub fn mprl<T: Scalar>(gt: &Tensor<T>, pred: &Tensor<T>) -> Result<[T; 3]> {
    if gt.shape() != pred.shape() {
        return Err(Error::Dimension(format!(
            "MPRL shapes differ: {:?} vs {:?}",
            gt.shape(),
            pred.shape()
        )));
    }
    let mut out = [T::zero(); 3];
    for (slot, &scale) in out.iter_mut().zip(&MPRL_SCALES) {
        *slot = prl(&resize_bilinear(gt, scale)?, &resize_bilinear(pred, scale)?)?;
    }
    Ok(out)
}

/// Verification distance between a drawn sketch and a generated
/// pseudo-sketch: the single-pair generative loss (pixel sum of squared
/// differences). Shapes must match; the full-size protocol crops both
/// sides to 188×143 beforehand.
pub fn verification_distance<T: Scalar>(query: &Tensor<T>, pseudo: &Tensor<T>) -> Result<T> {
    if query.channels() != 1 || pseudo.channels() != 1 {
        return Err(Error::Dimension(format!(
            "verification compares single-channel sketches, got {:?} and {:?}",
            query.shape(),
            pseudo.shape()
        )));
    }
    pair_sqdist(query, pseudo)
}

/// Cumulative match scores at the requested ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct CmsReport {
    pub ranks: Vec<usize>,
    /// Percentage of queries whose true identity appears in the top n, one
    /// entry per requested rank.
    pub scores: Vec<f64>,
    pub gallery_size: usize,
}

impl CmsReport {
    pub fn score_at(&self, rank: usize) -> Option<f64> {
        self.ranks.iter().position(|&r| r == rank).map(|i| self.scores[i])
    }
}

/// Rank every gallery entry per query by ascending verification distance
/// (ties keep gallery order) and score how often the true identity lands in
/// the top n.
pub fn cms<T: Scalar>(
    queries: &[(Tensor<T>, String)],
    gallery: &[(Tensor<T>, String)],
    ranks: &[usize],
) -> Result<CmsReport> {
    if queries.is_empty() || gallery.is_empty() {
        return Err(Error::Argument("CMS needs non-empty queries and gallery".into()));
    }
    if ranks.is_empty() {
        return Err(Error::Argument("CMS needs at least one rank".into()));
    }
    for &rank in ranks {
        if rank == 0 || rank > gallery.len() {
            return Err(Error::Argument(format!(
                "rank {rank} is outside the gallery size {}",
                gallery.len()
            )));
        }
    }
    for (_, identity) in queries {
        let hits = gallery.iter().filter(|(_, g)| g == identity).count();
        if hits != 1 {
            return Err(Error::Argument(format!(
                "query identity {identity:?} appears {hits} times in the gallery (need exactly 1)"
            )));
        }
    }

    // match_rank[q] = 1-based position of the true identity in the sorted
    // gallery for query q.
    let mut match_ranks = Vec::with_capacity(queries.len());
    for (sketch, identity) in queries {
        let mut order: Vec<(usize, f64)> = Vec::with_capacity(gallery.len());
        for (idx, (pseudo, _)) in gallery.iter().enumerate() {
            let d = verification_distance(sketch, pseudo)?
                .to_f64()
                .ok_or_else(|| Error::Argument("non-finite verification distance".into()))?;
            order.push((idx, d));
        }
        // Stable sort by distance preserves gallery order among ties.
        order.sort_by(|a, b| a.1.total_cmp(&b.1));
        let position = order
            .iter()
            .position(|&(idx, _)| &gallery[idx].1 == identity)
            .expect("identity present exactly once");
        match_ranks.push(position + 1);
    }

    let scores = ranks
        .iter()
        .map(|&rank| {
            let hits = match_ranks.iter().filter(|&&r| r <= rank).count();
            100.0 * hits as f64 / queries.len() as f64
        })
        .collect();
    Ok(CmsReport {
        ranks: ranks.to_vec(),
        scores,
        gallery_size: gallery.len(),
    })
}

/// Full verification protocol: generate a pseudo-sketch for every photo in
/// the test set, use the drawn sketches as queries, and score CMS.
pub fn evaluate_verification(
    net: &Network<f32>,
    test_set: &Dataset,
    ranks: &[usize],
) -> Result<CmsReport> {
    let pseudo = pseudo_sketches(net, test_set)?;
    let gallery: Vec<(Tensor<f32>, String)> = test_set
        .pairs()
        .iter()
        .zip(pseudo)
        .map(|(pair, sketch)| (sketch, pair.identity.clone()))
        .collect();
    let queries: Vec<(Tensor<f32>, String)> = test_set
        .pairs()
        .iter()
        .map(|pair| (pair.sketch.clone(), pair.identity.clone()))
        .collect();
    cms(&queries, &gallery, ranks)
}

/// Generate pseudo-sketches for every pair in a dataset.
pub fn pseudo_sketches(net: &Network<f32>, dataset: &Dataset) -> Result<Vec<Tensor<f32>>> {
    let inputs = network_inputs(dataset, net.spec().in_channels())?;
    inputs.iter().map(|input| Ok(forward(net, input)?.0)).collect()
}

/// Per-pair PRL triples and their dataset means.
#[derive(Debug, Clone, PartialEq)]
pub struct MprlReport {
    /// `(identity, [prl at 0.5×, 1×, 2×])` per pair.
    pub per_pair: Vec<(String, [f64; 3])>,
    pub means: [f64; 3],
}

/// Evaluate MPRL of generated pseudo-sketches against the drawn sketches
/// over a whole dataset.
pub fn evaluate_mprl(net: &Network<f32>, test_set: &Dataset) -> Result<MprlReport> {
    let pseudo = pseudo_sketches(net, test_set)?;
    mprl_report(
        test_set.pairs().iter().map(|p| (&p.sketch, p.identity.as_str())),
        pseudo.iter(),
    )
}

/// Assemble an [`MprlReport`] from (ground truth, identity) and prediction
/// streams of equal length and shapes.
pub fn mprl_report<'a>(
    truths: impl Iterator<Item = (&'a Tensor<f32>, &'a str)>,
    preds: impl Iterator<Item = &'a Tensor<f32>>,
) -> Result<MprlReport> {
    let mut per_pair = Vec::new();
    let mut sums = [0.0f64; 3];
    for ((gt, identity), pred) in truths.zip(preds) {
        let triple = mprl(gt, pred)?;
        let triple = [triple[0] as f64, triple[1] as f64, triple[2] as f64];
        for (s, v) in sums.iter_mut().zip(&triple) {
            *s += v;
        }
        per_pair.push((identity.to_string(), triple));
    }
    if per_pair.is_empty() {
        return Err(Error::Argument("MPRL needs at least one pair".into()));
    }
    let n = per_pair.len() as f64;
    Ok(MprlReport {
        per_pair,
        means: [sums[0] / n, sums[1] / n, sums[2] / n],
    })
}
