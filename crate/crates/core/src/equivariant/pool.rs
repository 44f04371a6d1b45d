use std::sync::Arc;

use crate::diff::{Graph, Var};
use crate::error::{Error, Result};
use crate::group::{GroupSpec, Representation};

/// Max over every `|G|`-sized block of the last axis.
pub fn group_pool(g: &mut Graph, x: Var, group_order: usize) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let last = *shape.last().ok_or_else(|| Error::Shape("group pool of a scalar".into()))?;
    if group_order == 0 || last % group_order != 0 {
        return Err(Error::Shape(format!(
            "{last} channels are not divisible into blocks of {group_order}"
        )));
    }
    let mut blocked = shape.clone();
    *blocked.last_mut().unwrap() = last / group_order;
    blocked.push(group_order);
    let axis = blocked.len() - 1;
    let r = g.reshape(x, blocked)?;
    g.max_over_axis(r, axis)
}

/// Plain-slice version of [`group_pool`] for a single feature vector.
pub fn group_pool_values(features: &[f64], group_order: usize) -> Result<Vec<f64>> {
    if group_order == 0 || features.len() % group_order != 0 {
        return Err(Error::Shape(format!(
            "{} channels are not divisible into blocks of {group_order}",
            features.len()
        )));
    }
    Ok(features
        .chunks(group_order)
        .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

/// Spatial sum plus first moments along x (columns) and y (rows).
///
/// Sum pooling alone would discard where things are; the moments keep the
/// position while still transforming by a known type: a regular field's
/// x-moment transforms by `reg ⊗ ρ_x`. Sums rather than means, so a single
/// active cell is not diluted by the map size.
#[derive(Debug, Clone)]
pub struct SpatialMoments {
    pub height: usize,
    pub width: usize,
    maps: Arc<Vec<f64>>,
}

fn centred(i: usize, n: usize) -> f64 {
    if n == 1 {
        0.0
    } else {
        (2.0 * i as f64 - (n - 1) as f64) / (n - 1) as f64
    }
}

impl SpatialMoments {
    pub const MAPS: usize = 3;

    pub fn new(height: usize, width: usize) -> Self {
        let plane = height * width;
        let mut maps = vec![0.0; 3 * plane];
        for i in 0..height {
            for j in 0..width {
                let p = i * width + j;
                maps[p] = 1.0;
                maps[plane + p] = centred(j, width);
                maps[2 * plane + p] = centred(i, height);
            }
        }
        Self {
            height,
            width,
            maps: Arc::new(maps),
        }
    }

    /// `[B, C, H, W]` → `[B, 3C]` laid out as (sums, x-moments, y-moments).
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 4 || s[2] != self.height || s[3] != self.width {
            return Err(Error::Shape(format!(
                "moments over {}x{} applied to {s:?}",
                self.height, self.width
            )));
        }
        g.spatial_project(x, self.maps.clone(), Self::MAPS)
    }

    /// Output type for `fields` regular input fields.
    pub fn output_rep(group: GroupSpec, fields: usize) -> Result<Representation> {
        let reg = Representation::regular(group);
        let rx = Representation::tensor(&reg, &Representation::coord_x(group)?)?;
        let ry = Representation::tensor(&reg, &Representation::coord_y(group)?)?;
        Representation::direct_sum(vec![reg.repeat(fields)?, rx.repeat(fields)?, ry.repeat(fields)?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::FieldTensor;

    #[test]
    fn pools_blocks() {
        let mut g = Graph::new();
        let x = g.input(FieldTensor::vector(vec![1.0, 4.0, 2.0, 3.0, 5.0, 5.0, 5.0, 5.0]));
        let y = group_pool(&mut g, x, 4).unwrap();
        assert_eq!(g.value(y).values, vec![4.0, 5.0]);
        assert!(group_pool(&mut g, x, 3).is_err());
        assert_eq!(group_pool_values(&[1.0, 4.0, 2.0, 3.0], 4).unwrap(), vec![4.0]);
    }

    #[test]
    fn moments_locate_mass() {
        let sm = SpatialMoments::new(2, 3);
        let mut g = Graph::new();
        // single unit of mass at row 1, column 2
        let mut v = vec![0.0; 6];
        v[5] = 1.0;
        let x = g.input(FieldTensor::new(vec![1, 1, 2, 3], v).unwrap());
        let y = sm.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y).values, vec![1.0, 1.0, 1.0]);
    }
}
