use serde::{Deserialize, Serialize};

use super::conv::{geometry_is_equivariant, EquivariantConv, FieldType, PlainConv};
use super::linear::{Dense, EquivariantLinear};
use super::pool::{group_pool, SpatialMoments};
use crate::diff::{FieldTensor, Graph, ParamStore, Var};
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::group::{GroupSpec, Representation};

/// Network sizes shared by the equivariant extractor and its CNN twin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    /// Planes per frame; the network sees the current and the initial frame.
    pub image_planes: usize,
    pub grid: usize,
    /// Regular fields per conv layer.
    pub conv_fields: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// Regular fields produced by the image and vector paths.
    pub image_fields: usize,
    pub vector_fields: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            image_planes: 4,
            grid: 16,
            conv_fields: vec![4, 8],
            kernel: 4,
            stride: 2,
            pad: 1,
            image_fields: 8,
            vector_fields: 8,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_fields.is_empty() || self.conv_fields.contains(&0) {
            return Err(Error::Config("conv_fields must be non-empty and positive".into()));
        }
        if self.image_fields == 0 || self.vector_fields == 0 || self.image_planes == 0 {
            return Err(Error::Config("field counts must be positive".into()));
        }
        let mut size = self.grid;
        for _ in &self.conv_fields {
            if self.stride == 0 || !geometry_is_equivariant(size, self.kernel, self.stride, self.pad) {
                return Err(Error::Config(format!(
                    "kernel {} stride {} pad {} on a {size}x{size} map does not commute with reflections",
                    self.kernel, self.stride, self.pad
                )));
            }
            size = (size + 2 * self.pad - self.kernel) / self.stride + 1;
        }
        Ok(())
    }

    fn final_size(&self) -> usize {
        self.conv_fields
            .iter()
            .fold(self.grid, |s, _| (s + 2 * self.pad - self.kernel) / self.stride + 1)
    }
}

/// Observations stacked for one forward pass.
#[derive(Debug, Clone)]
pub struct ObsBatch {
    pub batch: usize,
    pub channels: usize,
    pub grid: usize,
    /// `[B, 2P, H, W]`: current planes, then initial-frame planes.
    pub images: Vec<f64>,
    /// `[B, 7]`: agent state then auxiliary goal.
    pub vectors: Vec<f64>,
}

pub const VECTOR_DIM: usize = 7;

impl ObsBatch {
    pub fn new(obs: &[&Observation]) -> Result<Self> {
        let first = obs.first().ok_or(Error::Empty("observation batch"))?;
        let (grid, planes) = (first.grid, first.planes);
        let mut images = Vec::with_capacity(obs.len() * 2 * planes * grid * grid);
        let mut vectors = Vec::with_capacity(obs.len() * VECTOR_DIM);
        for o in obs {
            if o.grid != grid || o.planes != planes {
                return Err(Error::Shape("observations in a batch differ in shape".into()));
            }
            images.extend_from_slice(&o.image);
            images.extend_from_slice(&o.initial_image);
            vectors.extend_from_slice(&o.state);
            vectors.extend_from_slice(&o.aux);
        }
        Ok(Self {
            batch: obs.len(),
            channels: 2 * planes,
            grid,
            images,
            vectors,
        })
    }

    pub fn from_slice(obs: &[Observation]) -> Result<Self> {
        Self::new(&obs.iter().collect::<Vec<_>>())
    }

    fn inputs(&self, g: &mut Graph) -> Result<(Var, Var)> {
        let img = g.input(FieldTensor::new(
            vec![self.batch, self.channels, self.grid, self.grid],
            self.images.clone(),
        )?);
        let vec = g.input(FieldTensor::new(vec![self.batch, VECTOR_DIM], self.vectors.clone())?);
        Ok((img, vec))
    }
}

/// Type of the 7-d vector input: state `(x, y, z, gripper)` then goal `(x, y, z)`.
pub fn vector_rep(group: GroupSpec) -> Result<Representation> {
    let rx = Representation::coord_x(group)?;
    let ry = Representation::coord_y(group)?;
    let t = Representation::trivial(group);
    Representation::direct_sum(vec![rx.clone(), ry.clone(), t.clone(), t.clone(), rx, ry, t])
}

#[derive(Debug, Clone)]
pub struct EquivariantExtractor {
    pub group: GroupSpec,
    pub config: ExtractorConfig,
    convs: Vec<EquivariantConv>,
    moments: SpatialMoments,
    image_head: EquivariantLinear,
    vector_layers: Vec<EquivariantLinear>,
}

impl EquivariantExtractor {
    pub fn new(store: &mut ParamStore, group: GroupSpec, config: &ExtractorConfig) -> Result<Self> {
        config.validate()?;
        let mut convs = Vec::new();
        let mut in_type = FieldType::Trivial(2 * config.image_planes);
        for (i, &f) in config.conv_fields.iter().enumerate() {
            let out_type = FieldType::Regular(f);
            convs.push(EquivariantConv::new(
                store,
                &format!("extractor.conv{i}"),
                group,
                in_type,
                out_type,
                config.kernel,
                config.stride,
                config.pad,
            )?);
            in_type = out_type;
        }
        let size = config.final_size();
        let moments = SpatialMoments::new(size, size);
        let last = *config.conv_fields.last().expect("validated");
        let reg = Representation::regular(group);
        let image_head = EquivariantLinear::new(
            store,
            "extractor.image_head",
            SpatialMoments::output_rep(group, last)?,
            reg.repeat(config.image_fields)?,
            8.0,
        )?;
        let hidden = reg.repeat(config.vector_fields)?;
        let vector_layers = vec![
            EquivariantLinear::new(store, "extractor.vector0", vector_rep(group)?, hidden.clone(), 2.0)?,
            EquivariantLinear::new(store, "extractor.vector1", hidden.clone(), hidden, 2.0)?,
        ];
        Ok(Self {
            group,
            config: config.clone(),
            convs,
            moments,
            image_head,
            vector_layers,
        })
    }

    pub fn feature_rep(&self) -> Result<Representation> {
        Representation::regular(self.group).repeat(self.config.image_fields + self.config.vector_fields)
    }

    pub fn convs(&self) -> &[EquivariantConv] {
        &self.convs
    }

    pub fn image_head(&self) -> &EquivariantLinear {
        &self.image_head
    }

    pub fn vector_layers(&self) -> &[EquivariantLinear] {
        &self.vector_layers
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, img: Var, vec: Var) -> Result<Var> {
        let mut x = img;
        for conv in &self.convs {
            let y = conv.forward(g, store, x)?;
            x = g.relu(y);
        }
        let m = self.moments.forward(g, x)?;
        let h = self.image_head.forward(g, store, m)?;
        let hi = g.relu(h);
        let mut v = vec;
        for layer in &self.vector_layers {
            let y = layer.forward(g, store, v)?;
            v = g.relu(y);
        }
        g.concat(&[hi, v], 1)
    }
}

#[derive(Debug, Clone)]
pub struct CnnExtractor {
    pub config: ExtractorConfig,
    pub channels: (usize, usize),
    convs: Vec<PlainConv>,
    moments: SpatialMoments,
    image_head: Dense,
    vector_layers: Vec<Dense>,
}

impl CnnExtractor {
    fn param_count(config: &ExtractorConfig, c: &[usize], order: usize) -> usize {
        let k2 = config.kernel * config.kernel;
        let mut cin = 2 * config.image_planes;
        let mut total = 0;
        for &co in c {
            total += co * cin * k2 + co;
            cin = co;
        }
        let wi = config.image_fields * order;
        let wv = config.vector_fields * order;
        total += wi * 3 * cin + wi;
        total += wv * VECTOR_DIM + wv + wv * wv + wv;
        total
    }

    /// Channel counts whose parameter total is closest to `target`; layer
    /// widths grow by a factor of two as in the equivariant network.
    pub fn matched_channels(config: &ExtractorConfig, order: usize, target: usize) -> Vec<usize> {
        let layers = config.conv_fields.len();
        let mut best: Option<(usize, Vec<usize>)> = None;
        for base in 1..=256 {
            let c: Vec<usize> = (0..layers).map(|i| base << i).collect();
            let p = Self::param_count(config, &c, order);
            let diff = p.abs_diff(target);
            if best.as_ref().map_or(true, |(d, _)| diff < *d) {
                best = Some((diff, c));
            }
            if p > target {
                break;
            }
        }
        best.expect("searched at least one width").1
    }

    pub fn new(store: &mut ParamStore, config: &ExtractorConfig, channels: &[usize], order: usize) -> Result<Self> {
        config.validate()?;
        if channels.len() != config.conv_fields.len() {
            return Err(Error::Config("one channel count per conv layer is required".into()));
        }
        let mut convs = Vec::new();
        let mut cin = 2 * config.image_planes;
        for (i, &co) in channels.iter().enumerate() {
            convs.push(PlainConv::new(
                store,
                &format!("extractor.conv{i}"),
                cin,
                co,
                config.kernel,
                config.stride,
                config.pad,
            ));
            cin = co;
        }
        let size = config.final_size();
        let wi = config.image_fields * order;
        let wv = config.vector_fields * order;
        let image_head = Dense::new(store, "extractor.image_head", 3 * cin, wi, 2.0);
        let vector_layers = vec![
            Dense::new(store, "extractor.vector0", VECTOR_DIM, wv, 2.0),
            Dense::new(store, "extractor.vector1", wv, wv, 2.0),
        ];
        Ok(Self {
            config: config.clone(),
            channels: (channels[0], *channels.last().expect("non-empty")),
            convs,
            moments: SpatialMoments::new(size, size),
            image_head,
            vector_layers,
        })
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, img: Var, vec: Var) -> Result<Var> {
        let mut x = img;
        for conv in &self.convs {
            let y = conv.forward(g, store, x)?;
            x = g.relu(y);
        }
        let m = self.moments.forward(g, x)?;
        let h = self.image_head.forward(g, store, m)?;
        let hi = g.relu(h);
        let mut v = vec;
        for layer in &self.vector_layers {
            let y = layer.forward(g, store, v)?;
            v = g.relu(y);
        }
        g.concat(&[hi, v], 1)
    }
}

/// `h^equi` with its group-pooled invariant part.
#[derive(Debug, Clone)]
pub enum Extractor {
    Equivariant(EquivariantExtractor),
    Cnn(CnnExtractor),
}

/// Graph handles for one extractor pass.
#[derive(Debug, Clone, Copy)]
pub struct Features {
    pub equi: Var,
    pub inv: Var,
}

impl Extractor {
    pub fn equivariant(store: &mut ParamStore, group: GroupSpec, config: &ExtractorConfig) -> Result<Self> {
        Ok(Extractor::Equivariant(EquivariantExtractor::new(store, group, config)?))
    }

    /// CNN sized to the trainable count of the equivariant extractor built
    /// from the same config.
    pub fn cnn(store: &mut ParamStore, group: GroupSpec, config: &ExtractorConfig) -> Result<Self> {
        let mut probe = ParamStore::new(0);
        EquivariantExtractor::new(&mut probe, group, config)?;
        let channels = CnnExtractor::matched_channels(config, group.order(), probe.num_trainable());
        Ok(Extractor::Cnn(CnnExtractor::new(store, config, &channels, group.order())?))
    }

    pub fn config(&self) -> &ExtractorConfig {
        match self {
            Extractor::Equivariant(e) => &e.config,
            Extractor::Cnn(c) => &c.config,
        }
    }

    pub fn is_equivariant(&self) -> bool {
        matches!(self, Extractor::Equivariant(_))
    }

    pub fn feature_dim(&self, group: GroupSpec) -> usize {
        let c = self.config();
        (c.image_fields + c.vector_fields) * group.order()
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, batch: &ObsBatch, group: GroupSpec) -> Result<Features> {
        let c = self.config();
        if batch.grid != c.grid || batch.channels != 2 * c.image_planes {
            return Err(Error::Shape(format!(
                "observation {}x{} with {} channels, extractor expects {}x{} with {}",
                batch.grid,
                batch.grid,
                batch.channels,
                c.grid,
                c.grid,
                2 * c.image_planes
            )));
        }
        let (img, vec) = batch.inputs(g)?;
        let equi = match self {
            Extractor::Equivariant(e) => e.forward(g, store, img, vec)?,
            Extractor::Cnn(n) => n.forward(g, store, img, vec)?,
        };
        let inv = group_pool(g, equi, group.order())?;
        Ok(Features { equi, inv })
    }

    /// Invariant features as plain rows, one per observation.
    pub fn invariant_features(
        &self,
        store: &ParamStore,
        batch: &ObsBatch,
        group: GroupSpec,
    ) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, store, batch, group)?;
        let v = g.value(f.inv);
        let d = *v.shape.last().expect("2-d");
        Ok(v.values.chunks(d).map(<[f64]>::to_vec).collect())
    }
}
