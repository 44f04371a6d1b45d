use covers_core::diff::{FieldTensor, Graph, ParamStore, Var};
use covers_core::env::{transform_observation, Observation, PLANES};
use covers_core::equivariant::{
    group_pool, vector_rep, EquivariantConv, EquivariantLinear, Extractor, ExtractorConfig, FieldType, ObsBatch,
    SpatialMoments,
};
use covers_core::group::{GroupSpec, Representation, SpatialAction};
use covers_core::policy::{ActionSpec, Architecture, PolicyBundle, PolicyConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INPUTS: usize = 50;

fn d2() -> GroupSpec {
    GroupSpec::d2()
}

pub fn random_obs(rng: &mut ChaCha8Rng, grid: usize) -> Observation {
    let n = PLANES * grid * grid;
    Observation {
        grid,
        planes: PLANES,
        image: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        initial_image: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        state: [0; 4].map(|_| rng.random_range(-1.0..1.0)),
        aux: [0; 3].map(|_| rng.random_range(-1.0..1.0)),
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Acts on a batch of `[C, H, W]` feature maps: pixels move by the grid
/// action and each pixel's channel vector by `channel_rep`.
pub fn act_fields(channel_rep: &Representation, spatial: &SpatialAction, el: usize, x: &[f64], batch: usize) -> Vec<f64> {
    let g = d2().element(el).unwrap();
    let c = channel_rep.dimension;
    let plane = spatial.height * spatial.width;
    let mut out = Vec::with_capacity(x.len());
    for b in 0..batch {
        let moved = spatial.act_image(g, &x[b * c * plane..(b + 1) * c * plane], c).unwrap();
        let mut res = vec![0.0; c * plane];
        for p in 0..plane {
            let v: Vec<f64> = (0..c).map(|ch| moved[ch * plane + p]).collect();
            for (ch, w) in channel_rep.act(g, &v).unwrap().into_iter().enumerate() {
                res[ch * plane + p] = w;
            }
        }
        out.extend(res);
    }
    out
}

pub fn act_rows(rep: &Representation, el: usize, x: &[f64]) -> Vec<f64> {
    let g = d2().element(el).unwrap();
    x.chunks(rep.dimension).flat_map(|r| rep.act(g, r).unwrap()).collect()
}

fn eval(shape: &[usize], x: Vec<f64>, f: &dyn Fn(&mut Graph, Var) -> Var) -> Vec<f64> {
    let mut g = Graph::new();
    let v = g.input(FieldTensor::new(shape.to_vec(), x).unwrap());
    let y = f(&mut g, v);
    g.value(y).values.clone()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Equivariant linear layers over several representation pairs, with a
/// random bias so the bias constraint is exercised.
pub fn linear_residual() -> f64 {
    let g = d2();
    let reg = Representation::regular(g);
    let t = Representation::trivial(g);
    let rx = Representation::coord_x(g).unwrap();
    let ry = Representation::coord_y(g).unwrap();
    let cases = vec![
        (reg.repeat(2).unwrap(), reg.repeat(3).unwrap()),
        (vector_rep(g).unwrap(), reg.repeat(8).unwrap()),
        (SpatialMoments::output_rep(g, 4).unwrap(), reg.repeat(8).unwrap()),
        (reg.repeat(8).unwrap(), ActionSpec::new(g).unwrap().representation),
        (
            Representation::direct_sum(vec![t.clone(), t, rx.clone()]).unwrap(),
            Representation::direct_sum(vec![reg, ry, rx]).unwrap(),
        ),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for (i, (rin, rout)) in cases.into_iter().enumerate() {
        let mut store = ParamStore::new(i as u64);
        let layer = EquivariantLinear::new(&mut store, "l", rin.clone(), rout.clone(), 1.0).unwrap();
        let bid = store.id_of("l.bias").unwrap();
        for v in store.value_mut(bid).values.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let x = random_vec(&mut rng, INPUTS * rin.dimension);
        let f = |gr: &mut Graph, v: Var| layer.forward(gr, &store, v).unwrap();
        let y = eval(&[INPUTS, rin.dimension], x.clone(), &f);
        for el in 0..4 {
            let yt = eval(&[INPUTS, rin.dimension], act_rows(&rin, el, &x), &f);
            worst = worst.max(max_abs_diff(&yt, &act_rows(&rout, el, &y)));
        }
    }
    worst
}

/// Convolutions (lifting, regular→regular, regular→trivial, odd and even
/// grids) followed by ReLU.
pub fn conv_residual() -> f64 {
    let g = d2();
    // (in, out, grid, kernel, stride, pad)
    let cases = [
        (FieldType::Trivial(8), FieldType::Regular(4), 16, 4, 2, 1),
        (FieldType::Regular(4), FieldType::Regular(8), 8, 4, 2, 1),
        (FieldType::Regular(2), FieldType::Regular(2), 7, 3, 1, 1),
        (FieldType::Regular(2), FieldType::Trivial(3), 6, 3, 1, 1),
        (FieldType::Trivial(1), FieldType::Regular(1), 9, 3, 2, 0),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for (i, &(fin, fout, n, k, s, p)) in cases.iter().enumerate() {
        let mut store = ParamStore::new(100 + i as u64);
        let conv = EquivariantConv::new(&mut store, "c", g, fin, fout, k, s, p).unwrap();
        let (cin, cout) = (fin.channels(g), fout.channels(g));
        let m = conv.output_size(n);
        let sin = SpatialAction::new(g, n, n).unwrap();
        let sout = SpatialAction::new(g, m, m).unwrap();
        let (rin, rout) = (fin.representation(g).unwrap(), fout.representation(g).unwrap());
        let x = random_vec(&mut rng, INPUTS * cin * n * n);
        let shape = [INPUTS, cin, n, n];
        let f = |gr: &mut Graph, v: Var| {
            let y = conv.forward(gr, &store, v).unwrap();
            gr.relu(y)
        };
        let y = eval(&shape, x.clone(), &f);
        assert_eq!(y.len(), INPUTS * cout * m * m);
        for el in 0..4 {
            let yt = eval(&shape, act_fields(&rin, &sin, el, &x, INPUTS), &f);
            worst = worst.max(max_abs_diff(&yt, &act_fields(&rout, &sout, el, &y, INPUTS)));
        }
    }
    worst
}

/// Spatial moments on even and odd maps, and the invariance of group pooling.
pub fn pooling_residual() -> f64 {
    let g = d2();
    let reg4 = Representation::regular(g).repeat(4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for n in [4, 5] {
        let spatial = SpatialAction::new(g, n, n).unwrap();
        let moments = SpatialMoments::new(n, n);
        let out_rep = SpatialMoments::output_rep(g, 4).unwrap();
        let x = random_vec(&mut rng, INPUTS * 16 * n * n);
        let shape = [INPUTS, 16, n, n];
        let f = |gr: &mut Graph, v: Var| moments.forward(gr, v).unwrap();
        let y = eval(&shape, x.clone(), &f);
        for el in 0..4 {
            let yt = eval(&shape, act_fields(&reg4, &spatial, el, &x, INPUTS), &f);
            worst = worst.max(max_abs_diff(&yt, &act_rows(&out_rep, el, &y)));
        }
    }
    let x = random_vec(&mut rng, INPUTS * 16);
    let pool = |gr: &mut Graph, v: Var| group_pool(gr, v, 4).unwrap();
    let y = eval(&[INPUTS, 16], x.clone(), &pool);
    for el in 0..4 {
        let yt = eval(&[INPUTS, 16], act_rows(&reg4, el, &x), &pool);
        worst = worst.max(max_abs_diff(&yt, &y));
    }
    worst
}

fn features(ex: &Extractor, store: &ParamStore, obs: &[Observation]) -> (Vec<f64>, Vec<f64>) {
    let mut g = Graph::new();
    let f = ex.forward(&mut g, store, &ObsBatch::from_slice(obs).unwrap(), d2()).unwrap();
    (g.value(f.equi).values.clone(), g.value(f.inv).values.clone())
}

/// Worst `(h_equi equivariance, h_inv invariance)` residuals of the full
/// extractor on random observations.
pub fn extractor_residuals(architecture: Architecture, seeds: u64) -> (f64, f64) {
    let grp = d2();
    let cfg = ExtractorConfig::default();
    let spatial = SpatialAction::new(grp, cfg.grid, cfg.grid).unwrap();
    let (mut we, mut wi) = (0.0f64, 0.0f64);
    for seed in 0..seeds {
        let mut store = ParamStore::new(seed);
        let ex = match architecture {
            Architecture::Equivariant => Extractor::equivariant(&mut store, grp, &cfg).unwrap(),
            Architecture::Cnn => Extractor::cnn(&mut store, grp, &cfg).unwrap(),
        };
        let feat_rep = Representation::regular(grp).repeat(cfg.image_fields + cfg.vector_fields).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs: Vec<_> = (0..INPUTS).map(|_| random_obs(&mut rng, cfg.grid)).collect();
        let (equi, inv) = features(&ex, &store, &obs);
        for el in grp.elements() {
            let moved: Vec<_> = obs.iter().map(|o| transform_observation(&spatial, el, o).unwrap()).collect();
            let (e2, i2) = features(&ex, &store, &moved);
            if architecture == Architecture::Equivariant {
                we = we.max(max_abs_diff(&e2, &act_rows(&feat_rep, el.index, &equi)));
            }
            wi = wi.max(max_abs_diff(&i2, &inv));
        }
    }
    (we, wi)
}

/// Worst policy-mean equivariance and value invariance residuals of a
/// random bundle, with the largest mean magnitude seen so the check can be
/// confirmed non-vacuous. `log_std` must be untouched by the group.
pub fn policy_residuals(seed: u64) -> (f64, f64, f64) {
    let grp = d2();
    let cfg = PolicyConfig::default();
    let spatial = SpatialAction::new(grp, cfg.extractor.grid, cfg.extractor.grid).unwrap();
    let spec = ActionSpec::new(grp).unwrap();
    let mut bundle = PolicyBundle::new(0, grp, Architecture::Equivariant, &cfg, seed).unwrap();
    // the output layer starts near zero; scale it so the check is not vacuous
    let ids: Vec<_> = bundle.store.ids().collect();
    for id in ids {
        if bundle.store.name(id).starts_with("policy.mean") {
            for v in bundle.store.value_mut(id).values.iter_mut() {
                *v *= 1e3;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut wm, mut wv, mut size) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..INPUTS {
        let obs = random_obs(&mut rng, cfg.extractor.grid);
        let (mean, log_std) = bundle.action_dist(&obs).unwrap();
        let value = bundle.value(&obs).unwrap();
        size = size.max(mean.iter().fold(0.0, |a: f64, b| a.max(b.abs())));
        for el in grp.elements() {
            let moved = transform_observation(&spatial, el, &obs).unwrap();
            let (m2, l2) = bundle.action_dist(&moved).unwrap();
            assert_eq!(l2, log_std);
            wm = wm.max(max_abs_diff(&m2, &spec.representation.act(el, &mean).unwrap()));
            wv = wv.max((bundle.value(&moved).unwrap() - value).abs());
        }
    }
    (wm, wv, size)
}
