//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqlab::stnet::*;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, 1.0, r)
}

pub fn target(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

pub fn random_cube(cfg: &StnetConfig, seed: u64) -> Vec<f32> {
    let mut r = rng(seed);
    (0..cfg.cube_len())
        .map(|_| r.random_range(0.0f32..1.0))
        .collect()
}

pub fn toy() -> NetworkParams {
    NetworkParams::init(StnetConfig::preset(Preset::Toy), 1).unwrap()
}

/// Eight random cubes with labels spread over [0.1, 0.9].
pub fn cube_set(cfg: &StnetConfig, n: usize) -> (Vec<Vec<f32>>, Vec<f64>) {
    let cubes: Vec<Vec<f32>> = (0..n).map(|i| random_cube(cfg, 100 + i as u64)).collect();
    let labels = (0..n)
        .map(|i| 0.1 + 0.8 * i as f64 / (n - 1) as f64)
        .collect();
    (cubes, labels)
}

pub fn global_set(n: usize) -> (Vec<Tensor>, Vec<f64>) {
    let mut r = rng(90);
    let globals = (0..n)
        .map(|_| Tensor::uniform(&[3, 32], 1.0, &mut r))
        .collect();
    let labels = (0..n)
        .map(|i| 0.1 + 0.8 * i as f64 / (n - 1) as f64)
        .collect();
    (globals, labels)
}

// ---- finite-difference gradient oracle ----

pub type Build = dyn Fn(&mut Graph, &ParamStore) -> NodeId;

fn loss_of(store: &ParamStore, build: &Build) -> f64 {
    let mut g = Graph::new();
    let l = build(&mut g, store);
    g.value(l).data()[0]
}

/// Worst relative error between the analytic gradient and a central
/// difference, over at most `max_coords` sampled coordinates of every
/// parameter.
///
/// ReLU and max-pool make the loss piecewise smooth. A coordinate whose
/// one-sided differences disagree sits on a kink within `eps` and is
/// skipped; at least `min_smooth` of the sampled coordinates must remain.
pub fn gradient_error(
    store: &ParamStore,
    build: &Build,
    max_coords: usize,
    min_smooth: f64,
    seed: u64,
) -> Result<f64, String> {
    let mut g = Graph::new();
    let l = build(&mut g, store);
    let base = g.value(l).data()[0];
    let grads = g.backward(l, store).map_err(|e| e.to_string())?;
    let mut r = rng(seed);
    let eps = 1e-4;
    let mut worst: f64 = 0.0;
    for id in store.ids() {
        let n = store.get(id).len();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            (0..max_coords).map(|_| r.random_range(0..n)).collect()
        };
        let zero = Tensor::zeros(store.get(id).shape());
        let analytic = grads.get(id).unwrap_or(&zero);
        let mut num = Vec::new();
        let mut ana = Vec::new();
        for &i in &coords {
            let mut plus = store.clone();
            plus.get_mut(id).data_mut()[i] += eps;
            let mut minus = store.clone();
            minus.get_mut(id).data_mut()[i] -= eps;
            let (lp, lm) = (loss_of(&plus, build), loss_of(&minus, build));
            let (fwd, bwd) = ((lp - base) / eps, (base - lm) / eps);
            if (fwd - bwd).abs() > 1e-3 * fwd.abs().max(bwd.abs()).max(1e-3) {
                continue;
            }
            num.push((lp - lm) / (2.0 * eps));
            ana.push(analytic.data()[i]);
        }
        if num.is_empty() || (num.len() as f64) < min_smooth * coords.len() as f64 {
            return Err(format!(
                "{}: only {}/{} coordinates smooth",
                store.name(id),
                num.len(),
                coords.len()
            ));
        }
        let diff: f64 = num
            .iter()
            .zip(&ana)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = num
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(ana.iter().map(|v| v * v).sum::<f64>().sqrt());
        let rel = if scale < 1e-9 { diff } else { diff / scale };
        if rel >= 1e-4 {
            return Err(format!("{}: relative error {rel:e}", store.name(id)));
        }
        worst = worst.max(rel);
    }
    Ok(worst)
}

pub struct FdCase {
    pub name: &'static str,
    pub store: ParamStore,
    pub build: Box<Build>,
    pub max_coords: usize,
    pub min_smooth: f64,
    pub seed: u64,
}

impl FdCase {
    pub fn run(&self) -> Result<f64, String> {
        gradient_error(
            &self.store,
            &*self.build,
            self.max_coords,
            self.min_smooth,
            self.seed,
        )
        .map_err(|e| format!("{}: {e}", self.name))
    }
}

fn flat(g: &mut Graph, x: NodeId) -> NodeId {
    let n = g.value(x).len();
    g.reshape(x, &[n]).unwrap()
}

pub fn jitter_biases(p: &mut NetworkParams, seed: u64) {
    let mut r = rng(seed);
    let ids: Vec<ParamId> = p
        .store
        .ids()
        .filter(|&id| p.store.name(id).ends_with(".b"))
        .collect();
    for id in ids {
        p.store
            .get_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v += r.random_range(-0.1..0.1));
    }
}

pub fn fd_config() -> StnetConfig {
    StnetConfig {
        cube_side: 8,
        cube_frames: 4,
        stem_width: 4,
        stem_stride: [1, 2, 2],
        block_widths: vec![8, 16],
        cube_dim: 4,
        layers: 1,
        heads: 2,
        ..StnetConfig::preset(Preset::Toy)
    }
}

pub fn extractor_case() -> FdCase {
    let mut params = NetworkParams::init(fd_config(), 5).unwrap();
    // zero biases put exact ReLU kinks where all inputs vanish, which a
    // central difference cannot resolve
    jitter_biases(&mut params, 43);
    let mut r = rng(41);
    let cube = Tensor::uniform(&[3, 4, 8, 8], 1.0, &mut r);
    let cfg = params.config.clone();
    FdCase {
        name: "extractor + cube head",
        store: params.store,
        build: Box::new(move |g: &mut Graph, s: &ParamStore| {
            let p = NetworkParams {
                config: cfg.clone(),
                seed: 0,
                store: s.clone(),
            };
            let x = g.input(cube.clone());
            let f = p.extract_cube_features(g, x).unwrap();
            let y = p.cube_head(g, f).unwrap();
            g.mse(y, &[0.3]).unwrap()
        }),
        max_coords: 16,
        min_smooth: 0.25,
        seed: 42,
    }
}

/// One case per layer type, small enough to difference every parameter.
pub fn fd_cases() -> Vec<FdCase> {
    let mut cases = Vec::new();

    let mut r = rng(3);
    let mut s = ParamStore::new();
    s.insert("x", rand_tensor(&[2, 3, 5, 5], &mut r)).unwrap();
    s.insert("w", rand_tensor(&[3, 2, 3, 3, 3], &mut r))
        .unwrap();
    s.insert("b", rand_tensor(&[3], &mut r)).unwrap();
    let t = target(3 * 3 * 3 * 3, 4);
    cases.push(FdCase {
        name: "conv3d (stride, padding)",
        store: s,
        build: Box::new(move |g: &mut Graph, s: &ParamStore| {
            let x = g.param(s, s.id("x").unwrap());
            let w = g.param(s, s.id("w").unwrap());
            let b = g.param(s, s.id("b").unwrap());
            let y = g.conv3d(x, w, Some(b), [1, 2, 2], [1, 1, 1]).unwrap();
            g.mse(y, &t).unwrap()
        }),
        max_coords: 200,
        min_smooth: 0.75,
        seed: 5,
    });

    let mut r = rng(11);
    let mut s = ParamStore::new();
    s.insert("x", rand_tensor(&[2, 4, 4, 4], &mut r)).unwrap();
    let t = target(2 * 2 * 2 * 2 + 2 * 4 * 4 * 4, 12);
    cases.push(FdCase {
        name: "maxpool3d, relu, sigmoid",
        store: s,
        build: Box::new(move |g: &mut Graph, s: &ParamStore| {
            let x = g.param(s, s.id("x").unwrap());
            let a = g.relu(x);
            let p = g.maxpool3d(a, [2; 3], [2; 3], [0; 3]).unwrap();
            let q = g.maxpool3d(x, [3; 3], [1; 3], [1; 3]).unwrap();
            let q = g.sigmoid(q);
            let p = g.reshape(p, &[1, 16]).unwrap();
            let q = g.reshape(q, &[1, 128]).unwrap();
            let y = g.concat_cols(&[p, q]).unwrap();
            g.mse(y, &t).unwrap()
        }),
        max_coords: 200,
        min_smooth: 0.75,
        seed: 13,
    });

    let mut r = rng(21);
    let mut s = ParamStore::new();
    s.insert("x", rand_tensor(&[3, 6], &mut r)).unwrap();
    s.insert("w", rand_tensor(&[6, 6], &mut r)).unwrap();
    s.insert("b", rand_tensor(&[6], &mut r)).unwrap();
    s.insert("gamma", rand_tensor(&[6], &mut r)).unwrap();
    s.insert("beta", rand_tensor(&[6], &mut r)).unwrap();
    let t = target(12, 22);
    cases.push(FdCase {
        name: "linear, layer norm, softmax, matmul, row pools",
        store: s,
        build: Box::new(move |g: &mut Graph, s: &ParamStore| {
            let p = |g: &mut Graph, n: &str| g.param(s, s.id(n).unwrap());
            let x = p(g, "x");
            let w = p(g, "w");
            let b = p(g, "b");
            let gm = p(g, "gamma");
            let bt = p(g, "beta");
            let h = g.linear(x, w, b).unwrap();
            let n = g.layer_norm_rows(h, gm, bt).unwrap();
            let a = g.slice_cols(n, 0, 3).unwrap();
            let c = g.slice_cols(n, 3, 3).unwrap();
            let ct = g.transpose(c).unwrap();
            let sc = g.matmul(a, ct).unwrap();
            let sc = g.scale(sc, 0.7);
            let sm = g.softmax_rows(sc).unwrap();
            let o = g.matmul(sm, n).unwrap();
            let o = g.add(o, x).unwrap();
            let mean = g.mean_rows(o).unwrap();
            let max = g.max_rows(o).unwrap();
            let y = g.concat_cols(&[mean, max]).unwrap();
            g.mse(y, &t).unwrap()
        }),
        max_coords: 100,
        min_smooth: 0.75,
        seed: 23,
    });

    let mut r = rng(31);
    let mut s = ParamStore::new();
    s.insert("x", rand_tensor(&[4, 2, 3, 3], &mut r)).unwrap();
    s.insert("gate", rand_tensor(&[4], &mut r)).unwrap();
    let t = target(4 * 18 + 4, 32);
    cases.push(FdCase {
        name: "channel gate, channel mean",
        store: s,
        build: Box::new(move |g: &mut Graph, s: &ParamStore| {
            let x = g.param(s, s.id("x").unwrap());
            let gt = g.param(s, s.id("gate").unwrap());
            let y = g.scale_channels(x, gt).unwrap();
            let m = g.channel_mean(y);
            let yf = flat(g, y);
            let y = g.concat_rows(&[yf, m]).unwrap();
            g.mse(y, &t).unwrap()
        }),
        max_coords: 100,
        min_smooth: 0.75,
        seed: 33,
    });

    let mut r = rng(4);
    let mut s = ParamStore::new();
    s.insert("p", rand_tensor(&[5], &mut r)).unwrap();
    let t = target(5, 6);
    cases.push(FdCase {
        name: "l1 loss",
        store: s,
        build: Box::new(move |g: &mut Graph, s: &ParamStore| {
            let p = g.param(s, s.id("p").unwrap());
            g.l1(p, &t).unwrap()
        }),
        max_coords: 5,
        min_smooth: 1.0,
        seed: 7,
    });

    cases.push(extractor_case());

    for (model_dim, name) in [
        (None, "transformer head"),
        (Some(4), "projected transformer head"),
    ] {
        let cfg = StnetConfig {
            model_dim,
            ..fd_config()
        };
        let params = NetworkParams::init(cfg.clone(), 6).unwrap();
        let mut r = rng(51);
        let global = Tensor::uniform(&[3, 8], 1.0, &mut r);
        cases.push(FdCase {
            name,
            store: params.store,
            build: Box::new(move |g: &mut Graph, s: &ParamStore| {
                let p = NetworkParams {
                    config: cfg.clone(),
                    seed: 0,
                    store: s.clone(),
                };
                let x = g.input(global.clone());
                let y = p.encode_and_regress(g, x).unwrap();
                g.mse(y, &[0.8]).unwrap()
            }),
            max_coords: 20,
            min_smooth: 0.75,
            seed: 52,
        });
    }
    cases
}
