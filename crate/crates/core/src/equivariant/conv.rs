use std::sync::Arc;

use crate::diff::{FieldTensor, Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::group::{GroupSpec, Representation, SpatialAction};

/// Channel type of a conv feature map. Only permutation representations are
/// supported, so orbit-copying yields steerable kernels with no interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldType {
    Trivial(usize),
    Regular(usize),
}

impl FieldType {
    pub fn channels(&self, group: GroupSpec) -> usize {
        match *self {
            FieldType::Trivial(n) => n,
            FieldType::Regular(n) => n * group.order(),
        }
    }

    pub fn representation(&self, group: GroupSpec) -> Result<Representation> {
        match *self {
            FieldType::Trivial(n) => Representation::trivial(group).repeat(n),
            FieldType::Regular(n) => Representation::regular(group).repeat(n),
        }
    }

    fn fields(&self) -> usize {
        match *self {
            FieldType::Trivial(n) | FieldType::Regular(n) => n,
        }
    }
}

/// Checks that reflecting the input grid reflects the output grid exactly.
pub fn geometry_is_equivariant(size: usize, kernel: usize, stride: usize, pad: usize) -> bool {
    size + 2 * pad >= kernel && (size + 2 * pad - kernel) % stride == 0
}

/// Channel permutation `perm[g][c] = c'` read off a permutation representation.
fn channel_perms(rep: &Representation) -> Result<Vec<Vec<usize>>> {
    rep.group
        .elements()
        .into_iter()
        .map(|g| {
            let m = rep.rep_matrix(g)?;
            let mut perm = vec![0; rep.dimension];
            for (col, slot) in perm.iter_mut().enumerate() {
                *slot = (0..rep.dimension)
                    .find(|&row| m.get(row, col) == 1)
                    .ok_or_else(|| Error::Unsupported("conv fields must be permutation types".into()))?;
            }
            Ok(perm)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EquivariantConv {
    pub group: GroupSpec,
    pub in_type: FieldType,
    pub out_type: FieldType,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// Orbit id for every entry of the `[Cout, Cin, k, k]` kernel.
    orbit: Arc<Vec<usize>>,
    free: ParamId,
    bias: ParamId,
    bias_index: Arc<Vec<usize>>,
}

impl EquivariantConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: GroupSpec,
        in_type: FieldType,
        out_type: FieldType,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let rin = in_type.representation(group)?;
        let rout = out_type.representation(group)?;
        let pin = channel_perms(&rin)?;
        let pout = channel_perms(&rout)?;
        let spatial = SpatialAction::new(group, kernel, kernel)?;
        let (cin, cout, kk) = (rin.dimension, rout.dimension, kernel * kernel);
        let n = cout * cin * kk;
        let mut orbit = vec![usize::MAX; n];
        let mut next = 0;
        for t in 0..n {
            if orbit[t] != usize::MAX {
                continue;
            }
            let (o, rest) = (t / (cin * kk), t % (cin * kk));
            let (i, p) = (rest / kk, rest % kk);
            for g in group.elements() {
                let dst = (pout[g.index][o] * cin + pin[g.index][i]) * kk + spatial.pixel_map(g)[p];
                orbit[dst] = next;
            }
            next += 1;
        }
        // each orbit contributes |G| / |stabilizer| kernel entries to every
        // output channel on average; scale for He-style variance over fan-in
        let fan_in = (cin * kk) as f64;
        let free = store.add_normal(format!("{name}.kernel"), vec![next], (2.0 / fan_in).sqrt());
        let bias = store.add_constant(format!("{name}.bias"), vec![out_type.fields()], 0.0);
        let per_field = match out_type {
            FieldType::Trivial(_) => 1,
            FieldType::Regular(_) => group.order(),
        };
        let bias_index = (0..cout).map(|c| c / per_field).collect();
        Ok(Self {
            group,
            in_type,
            out_type,
            kernel,
            stride,
            pad,
            orbit: Arc::new(orbit),
            free,
            bias,
            bias_index: Arc::new(bias_index),
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_type.channels(self.group)
    }

    pub fn out_channels(&self) -> usize {
        self.out_type.channels(self.group)
    }

    pub fn num_free(&self) -> usize {
        self.orbit.iter().max().map_or(0, |m| m + 1)
    }

    pub fn output_size(&self, size: usize) -> usize {
        (size + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn kernel_shape(&self) -> Vec<usize> {
        vec![self.out_channels(), self.in_channels(), self.kernel, self.kernel]
    }

    /// Full kernel `[Cout, Cin, k, k]` realized from the free parameters.
    pub fn expand_kernel(&self, store: &ParamStore) -> FieldTensor {
        let free = &store.value(self.free).values;
        let values = self.orbit.iter().map(|&o| free[o]).collect();
        FieldTensor::new(self.kernel_shape(), values).expect("sized")
    }

    /// `x` is `[B, Cin, H, W]`; the output keeps the batch axis.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let xs = g.shape(x).to_vec();
        if xs.len() != 4 || xs[1] != self.in_channels() {
            return Err(Error::Shape(format!(
                "conv expects [B, {}, H, W], got {xs:?}",
                self.in_channels()
            )));
        }
        if !geometry_is_equivariant(xs[2], self.kernel, self.stride, self.pad)
            || !geometry_is_equivariant(xs[3], self.kernel, self.stride, self.pad)
        {
            return Err(Error::Shape(format!(
                "{}x{} input with kernel {} stride {} pad {} does not commute with reflections",
                xs[2], xs[3], self.kernel, self.stride, self.pad
            )));
        }
        let free = g.param(store, self.free);
        let k = g.gather(free, self.orbit.clone(), self.kernel_shape())?;
        let y = g.conv2d(x, k, self.stride, self.pad)?;
        let b = g.param(store, self.bias);
        let b = g.gather(b, self.bias_index.clone(), vec![self.out_channels()])?;
        g.add_bias(y, b, 1)
    }
}

/// Unconstrained convolution used by the CNN ablation.
#[derive(Debug, Clone)]
pub struct PlainConv {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    k: ParamId,
    b: ParamId,
}

impl PlainConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let std = (2.0 / (cin * kernel * kernel) as f64).sqrt();
        let k = store.add_normal(format!("{name}.kernel"), vec![cout, cin, kernel, kernel], std);
        let b = store.add_constant(format!("{name}.bias"), vec![cout], 0.0);
        Self {
            cin,
            cout,
            kernel,
            stride,
            pad,
            k,
            b,
        }
    }

    pub fn num_params(&self) -> usize {
        self.cout * self.cin * self.kernel * self.kernel + self.cout
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let k = g.param(store, self.k);
        let y = g.conv2d(x, k, self.stride, self.pad)?;
        let b = g.param(store, self.b);
        g.add_bias(y, b, 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lift_copies_representative() {
        let grp = GroupSpec::d2();
        let mut store = ParamStore::new(1);
        let conv = EquivariantConv::new(
            &mut store,
            "c",
            grp,
            FieldType::Trivial(1),
            FieldType::Regular(1),
            3,
            1,
            1,
        )
        .unwrap();
        assert_eq!(conv.num_free(), 9);
        let k = conv.expand_kernel(&store);
        let rep = &store.value(store.id_of("c.kernel").unwrap()).values;
        // identity block is the raw representative
        assert_eq!(&k.values[..9], &rep[..]);
        let spatial = SpatialAction::new(grp, 3, 3).unwrap();
        for g in grp.elements() {
            let moved = spatial.act_image(g, rep, 1).unwrap();
            assert_eq!(&k.values[g.index * 9..(g.index + 1) * 9], &moved[..]);
        }
    }

    #[test]
    fn geometry_check() {
        assert!(geometry_is_equivariant(16, 4, 2, 1));
        assert!(!geometry_is_equivariant(16, 3, 2, 1));
        assert!(geometry_is_equivariant(7, 3, 2, 1));
    }
}
