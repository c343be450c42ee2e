//! Region of interest, anchor grids and the covering radius
//! `ρ(D) = max_{ς ∈ region} min_{x ∈ D} ‖ς - x‖`.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, domain_err, Result};
use crate::gp::Points;

/// Axis-aligned box in feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionOfInterest {
    /// `[lower, upper]` per dimension.
    pub bounds: Vec<[f64; 2]>,
}

impl Default for RegionOfInterest {
    /// Position in `[-0.1, 0.1]`, increment feature in `[-0.8, 0.8]`.
    fn default() -> Self {
        Self { bounds: vec![[-0.1, 0.1], [-0.8, 0.8]] }
    }
}

impl RegionOfInterest {
    pub fn new(bounds: Vec<[f64; 2]>) -> Result<Self> {
        let r = Self { bounds };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bounds.is_empty() {
            return config_err("region of interest has no dimensions");
        }
        for (i, [lo, hi]) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return config_err(format!("dimension {i}: lower bound {lo} not below upper bound {hi}"));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.bounds).all(|(v, [lo, hi])| *v >= *lo && *v <= *hi)
    }

    pub fn center(&self) -> Vec<f64> {
        self.bounds.iter().map(|[lo, hi]| 0.5 * (lo + hi)).collect()
    }

    /// Cartesian product of `counts[i]` equally spaced values per dimension,
    /// endpoints included; the first dimension varies slowest.
    fn lattice(&self, counts: &[usize]) -> Result<Points> {
        if counts.len() != self.dim() {
            return config_err(format!("{} grid counts for a {}-dimensional region", counts.len(), self.dim()));
        }
        if let Some(c) = counts.iter().find(|&&c| c < 2) {
            return config_err(format!("grid needs at least 2 points per dimension, got {c}"));
        }
        let axes: Vec<Vec<f64>> = self
            .bounds
            .iter()
            .zip(counts)
            .map(|([lo, hi], &c)| {
                (0..c).map(|i| if i == c - 1 { *hi } else { lo + (hi - lo) * i as f64 / (c - 1) as f64 }).collect()
            })
            .collect();
        let total: usize = counts.iter().product();
        let mut data = Vec::with_capacity(total * self.dim());
        let mut idx = vec![0usize; self.dim()];
        for _ in 0..total {
            data.extend(idx.iter().zip(&axes).map(|(&i, ax)| ax[i]));
            for d in (0..self.dim()).rev() {
                idx[d] += 1;
                if idx[d] < counts[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Points::from_flat(self.dim(), data)
    }
}

/// Finite set of distinct anchor points discretizing the region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorGrid {
    pub points: Points,
    pub counts: Vec<usize>,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Distance between neighbouring anchors in each dimension.
    pub fn spacing(&self, region: &RegionOfInterest) -> Vec<f64> {
        region.bounds.iter().zip(&self.counts).map(|([lo, hi], &c)| (hi - lo) / (c - 1) as f64).collect()
    }
}

pub fn build_anchor_grid(region: &RegionOfInterest, counts: &[usize]) -> Result<AnchorGrid> {
    region.validate()?;
    Ok(AnchorGrid { points: region.lattice(counts)?, counts: counts.to_vec() })
}

/// Covering radius and the centre of the largest empty ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringRadius {
    pub radius: f64,
    pub center: Vec<f64>,
}

/// Approximates the covering radius by scanning an `eval_counts` grid over
/// the region. Ties keep the first maximizer in grid order.
pub fn covering_radius(data: &Points, region: &RegionOfInterest, eval_counts: &[usize]) -> Result<CoveringRadius> {
    region.validate()?;
    if data.is_empty() {
        return domain_err("covering radius of an empty dataset");
    }
    if data.dim() != region.dim() {
        return config_err(format!("{}-dimensional data in a {}-dimensional region", data.dim(), region.dim()));
    }
    let grid = region.lattice(eval_counts)?;
    let mut best = CoveringRadius { radius: -1.0, center: Vec::new() };
    for g in grid.rows() {
        let nearest_sq = data
            .rows()
            .map(|x| x.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let r = nearest_sq.sqrt();
        if r > best.radius {
            best = CoveringRadius { radius: r, center: g.to_vec() };
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_anchor_grid() {
        let region = RegionOfInterest::default();
        let grid = build_anchor_grid(&region, &[5, 5]).unwrap();
        assert_eq!(grid.len(), 25);
        let s = grid.spacing(&region);
        assert!((s[0] - 0.05).abs() < 1e-15 && (s[1] - 0.40).abs() < 1e-15);
        assert!(grid.points.rows().all(|p| region.contains(p)));
        let mut rows: Vec<Vec<u64>> = grid.points.rows().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        rows.sort();
        rows.dedup();
        assert_eq!(rows.len(), 25);
    }

    #[test]
    fn unit_square_corners() {
        let region = RegionOfInterest::new(vec![[0.0, 1.0], [0.0, 1.0]]).unwrap();
        let grid = build_anchor_grid(&region, &[2, 2]).unwrap();
        let rows: Vec<&[f64]> = grid.points.rows().collect();
        assert_eq!(rows, vec![&[0.0, 0.0][..], &[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]]);
    }

    #[test]
    fn grid_count_below_two_rejected() {
        assert!(build_anchor_grid(&RegionOfInterest::default(), &[1, 5]).is_err());
        assert!(RegionOfInterest::new(vec![[1.0, 0.0]]).is_err());
    }

    #[test]
    fn single_centre_point_radius_is_half_diagonal() {
        let region = RegionOfInterest::default();
        let data = Points::from_rows(2, &[[0.0, 0.0]]).unwrap();
        let cr = covering_radius(&data, &region, &[101, 101]).unwrap();
        assert!((cr.radius - (0.1f64.powi(2) + 0.8f64.powi(2)).sqrt()).abs() < 1e-12);
        assert!((cr.radius - 0.80623).abs() < 1e-5);
        assert!(cr.center.iter().zip(&region.bounds).all(|(c, [lo, hi])| c == lo || c == hi));
    }

    #[test]
    fn dataset_covering_the_eval_grid_has_zero_radius() {
        let region = RegionOfInterest::default();
        let grid = region.lattice(&[11, 11]).unwrap();
        assert_eq!(covering_radius(&grid, &region, &[11, 11]).unwrap().radius, 0.0);
    }

    #[test]
    fn empty_dataset_is_domain_error() {
        assert!(covering_radius(&Points::empty(2), &RegionOfInterest::default(), &[5, 5]).is_err());
    }

    fn arb_points(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<[f64; 2]>> {
        proptest::collection::vec((-0.2..0.2f64, -1.5..1.5f64).prop_map(|(a, b)| [a, b]), n)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn adding_a_point_never_increases_radius(data in arb_points(1..30), extra in arb_points(1..2)) {
            let region = RegionOfInterest::default();
            let before = covering_radius(&Points::from_rows(2, &data).unwrap(), &region, &[31, 31]).unwrap();
            let mut more = data.clone();
            more.push(extra[0]);
            let after = covering_radius(&Points::from_rows(2, &more).unwrap(), &region, &[31, 31]).unwrap();
            prop_assert!(after.radius <= before.radius);
        }

        #[test]
        fn translation_equivariance(data in arb_points(1..20), shift in (-3.0..3.0f64, -3.0..3.0f64)) {
            let region = RegionOfInterest::default();
            let moved_region = RegionOfInterest::new(
                region.bounds.iter().zip([shift.0, shift.1]).map(|([lo, hi], s)| [lo + s, hi + s]).collect(),
            ).unwrap();
            let moved: Vec<[f64; 2]> = data.iter().map(|p| [p[0] + shift.0, p[1] + shift.1]).collect();
            let a = covering_radius(&Points::from_rows(2, &data).unwrap(), &region, &[21, 21]).unwrap();
            let b = covering_radius(&Points::from_rows(2, &moved).unwrap(), &moved_region, &[21, 21]).unwrap();
            prop_assert!((a.radius - b.radius).abs() < 1e-12);
        }

        #[test]
        fn refinement_changes_radius_by_at_most_one_cell_diagonal(data in arb_points(1..20)) {
            let region = RegionOfInterest::default();
            let pts = Points::from_rows(2, &data).unwrap();
            let coarse = covering_radius(&pts, &region, &[21, 21]).unwrap();
            let fine = covering_radius(&pts, &region, &[41, 41]).unwrap();
            let diag = ((0.2f64 / 20.0).powi(2) + (1.6f64 / 20.0).powi(2)).sqrt();
            prop_assert!((coarse.radius - fine.radius).abs() <= diag);
        }
    }
}
