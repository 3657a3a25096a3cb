use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::fde::{recouple_inputs, CombinationMode, Hfu, HfuConfig, LfuConfig, LfuMode};
use crate::io;
use crate::mrm::{apply_masks, sample_complementary_masks, selected_patches};
use crate::ops::{attention, channel_pool, conv2d, conv2d_transpose, global_avg_pool, ConvSpec, Mode, PoolMode};
use crate::params::ParamStore;
use crate::spectral::{dct2d, dct_basis, idct2d, select_frequencies, FrequencyPolicy};
use crate::tensor::{Shape, Tensor};
use crate::fde::EncoderConfig;
use crate::training::{
    rc_loss, rc_loss_graph, toy_train_run, total_loss_graph, DataSpec, LossWeights, ReconstructionModel, Sgd, SgdConfig,
    TrainConfig,
};

use super::fragments::*;
use super::gradcheck::{finite_diff_check, GradCheckOptions};
use super::oracle::*;
use super::reparam::{reparam_equivalence_check, ReparamOptions};
use super::report::CheckReport;

pub const SUITES: [&str; 7] = ["tensor", "dct", "hfu", "lfu", "css", "mrm", "training"];

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub suites: Vec<String>,
    pub passed: bool,
    pub reports: Vec<CheckReport>,
}

impl SuiteReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckReport> {
        self.reports.iter().filter(|r| !r.passed())
    }
}

/// Expands `all` and rejects unknown names before anything runs.
pub fn resolve_suites<S: AsRef<str>>(names: &[S]) -> Result<Vec<&'static str>> {
    let mut out: Vec<&'static str> = Vec::new();
    for n in names {
        let n = n.as_ref();
        if n == "all" {
            out.extend(SUITES);
            continue;
        }
        match SUITES.iter().find(|s| **s == n) {
            Some(s) => out.push(s),
            None => return Err(Error::UnknownSuite(n.to_string())),
        }
    }
    if out.is_empty() {
        out.extend(SUITES);
    }
    let mut seen = Vec::new();
    out.retain(|s| {
        let fresh = !seen.contains(s);
        seen.push(*s);
        fresh
    });
    Ok(out)
}

pub fn run_suite<S: AsRef<str>>(names: &[S], seed: u64) -> Result<SuiteReport> {
    let suites = resolve_suites(names)?;
    let mut reports = Vec::new();
    for s in &suites {
        reports.extend(match *s {
            "tensor" => tensor_suite(seed),
            "dct" => dct_suite(seed),
            "hfu" => hfu_suite(seed),
            "lfu" => lfu_suite(seed),
            "css" => css_suite(seed),
            "mrm" => mrm_suite(seed),
            "training" => training_suite(seed),
            _ => unreachable!(),
        });
    }
    Ok(SuiteReport {
        seed,
        suites: suites.iter().map(|s| s.to_string()).collect(),
        passed: reports.iter().all(|r| r.passed()),
        reports,
    })
}

/// Runs `f`, turning an error into a failed report.
fn guarded(name: &str, seed: u64, f: impl FnOnce() -> Result<f64>, tolerance: f64) -> CheckReport {
    let started = Instant::now();
    match f() {
        Ok(m) => CheckReport::new(name, m, tolerance, seed, started),
        Err(e) => CheckReport::failed(name, seed, started, e.to_string()),
    }
}

fn grad(mut frag: Fragment, seed: u64, tolerance: f64) -> CheckReport {
    finite_diff_check(&mut frag, GradCheckOptions {
        seed,
        tolerance,
        ..GradCheckOptions::default()
    })
}

use super::gradcheck::Fragment;

/// Samples a convolution spec covering the kernel sizes, dilations and group patterns the model uses.
pub fn random_conv_spec(rng: &mut ChaCha8Rng) -> (ConvSpec, Shape) {
    let k = [1, 3, 6, 7][rng.gen_range(0..4)];
    let d = rng.gen_range(1..=3);
    let c = rng.gen_range(1..=4);
    let depthwise = rng.gen_bool(0.5);
    let (cin, cout, groups) = if depthwise { (c, c, c) } else { (c, rng.gen_range(1..=4), 1) };
    let stride = rng.gen_range(1..=2);
    let padding = rng.gen_range(0..=d * (k - 1) / 2 + 1);
    let span = d * (k - 1) + 1;
    let extent = span + rng.gen_range(0..6);
    let spec = ConvSpec::new(cin, cout, k)
        .stride(stride)
        .padding(padding)
        .dilation(d)
        .groups(groups)
        .bias(rng.gen_bool(0.5));
    (spec, Shape::new(rng.gen_range(1..=2), cin, extent, extent + 1))
}

pub fn conv_oracle_check(seed: u64, cases: usize) -> CheckReport {
    guarded("tensor/conv2d_vs_direct_oracle", seed, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0_f64;
        for _ in 0..cases {
            let (spec, xs) = random_conv_spec(&mut rng);
            let x = Tensor::<f64>::rand_uniform(xs, -1.0, 1.0, &mut rng);
            let w = Tensor::rand_uniform(spec.weight_shape(), -1.0, 1.0, &mut rng);
            let b = spec.has_bias.then(|| Tensor::rand_uniform(spec.bias_shape(), -1.0, 1.0, &mut rng));
            let fast = conv2d(&x, &spec, &w, b.as_ref())?;
            let slow = conv_direct_oracle(&x, &w, b.as_ref(), &spec)?;
            worst = worst.max(fast.max_abs_diff(&slow)?);
        }
        Ok(worst)
    }, 1e-12)
}

fn tensor_suite(seed: u64) -> Vec<CheckReport> {
    let mut out = vec![conv_oracle_check(seed, 50)];
    out.push(guarded("tensor/depthwise_lfu_configs", seed, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = LfuConfig::default_for(8)?;
        let mut worst = 0.0_f64;
        let mut specs: Vec<ConvSpec> = cfg.branches.iter().map(|b| b.conv_spec(8)).collect();
        specs.push(cfg.merged_spec());
        for spec in specs {
            let x = Tensor::<f64>::rand_uniform(Shape::new(1, 8, 11, 11), -1.0, 1.0, &mut rng);
            let w = Tensor::rand_uniform(spec.weight_shape(), -1.0, 1.0, &mut rng);
            worst = worst.max(conv2d(&x, &spec, &w, None)?.max_abs_diff(&conv_direct_oracle(&x, &w, None, &spec)?)?);
        }
        Ok(worst)
    }, 1e-12));
    out.push(guarded("tensor/conv2d_linearity", seed, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = ConvSpec::new(3, 4, 3).padding(2).dilation(2).bias(false);
        let s = Shape::new(1, 3, 9, 9);
        let (x, y) = (Tensor::<f64>::rand_uniform(s, -1.0, 1.0, &mut rng), Tensor::rand_uniform(s, -1.0, 1.0, &mut rng));
        let w = Tensor::rand_uniform(spec.weight_shape(), -1.0, 1.0, &mut rng);
        let (a, b) = (0.7, -1.3);
        let lhs = conv2d(&x.zip_map(&y, |p, q| a * p + b * q)?, &spec, &w, None)?;
        let rhs = conv2d(&x, &spec, &w, None)?.zip_map(&conv2d(&y, &spec, &w, None)?, |p, q| a * p + b * q)?;
        lhs.max_abs_diff(&rhs)
    }, 1e-10));
    out.push(guarded("tensor/conv2d_transpose_adjoint", seed, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = ConvSpec::new(3, 5, 3).stride(2).padding(1).bias(false);
        let x = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 9, 9), -1.0, 1.0, &mut rng);
        let w = Tensor::rand_uniform(spec.weight_shape(), -1.0, 1.0, &mut rng);
        let y = Tensor::rand_uniform(spec.output_shape(x.shape())?, -1.0, 1.0, &mut rng);
        let lhs = conv2d(&x, &spec, &w, None)?.dot(&y)?;
        let t = conv2d_transpose(&y, &spec.adjoint_forward(), &w, None)?;
        let rhs = x.dot(&t)?;
        Ok((lhs - rhs).abs())
    }, 1e-9));
    out.push(guarded("tensor/channel_pool_vs_loop", seed, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::rand_uniform(Shape::new(2, 5, 4, 3), -1.0, 1.0, &mut rng);
        let a = channel_pool(&x, PoolMode::Avg)?.max_abs_diff(&channel_pool_oracle(&x, false))?;
        let m = channel_pool(&x, PoolMode::Max)?.max_abs_diff(&channel_pool_oracle(&x, true))?;
        Ok(a.max(m))
    }, 1e-15));
    out.push(guarded("tensor/global_avg_pool_vs_loop", seed, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::rand_uniform(Shape::new(2, 5, 7, 6), -1.0, 1.0, &mut rng);
        global_avg_pool(&x)?.max_abs_diff(&global_avg_pool_oracle(&x))
    }, 1e-12));
    out.push(guarded("tensor/fdt_round_trip", seed, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f32>::rand_uniform(Shape::new(2, 3, 4, 5), -1e3, 1e3, &mut rng);
        let back: Tensor<f32> = io::decode(&io::encode(&x)?)?;
        let same = back.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        Ok(if same && back.shape() == x.shape() { 0.0 } else { 1.0 })
    }, 0.0));
    out.push(grad(quadratic_fragment(seed), seed, 1e-6));
    out.push(gradcheck_fault_injection(seed));
    out.push(grad(batchnorm_fragment(seed), seed, 1e-5));
    out.push(grad(stem_fragment(seed), seed, 1e-4));
    out
}

/// Passes when a 1.01x gradient scaling makes the check fail.
pub fn gradcheck_fault_injection(seed: u64) -> CheckReport {
    let started = Instant::now();
    let inner = finite_diff_check(&mut hfu_fragment(seed), GradCheckOptions {
        seed,
        grad_scale: 1.01,
        ..GradCheckOptions::default()
    });
    CheckReport::boolean("gradcheck/fault_injection_detected", !inner.passed() && inner.metric >= 1e-3, seed, started)
        .with_detail(format!("scaled metric {:.3e}", inner.metric))
}

pub fn dct_oracle_check(seed: u64, planes: usize) -> CheckReport {
    guarded("dct/dct2d_vs_quadruple_loop", seed, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::rand_uniform(Shape::new(planes, 1, 8, 8), -1.0, 1.0, &mut rng);
        dct2d(&x)?.max_abs_diff(&dct_direct_oracle(&x))
    }, 1e-12)
}

pub fn basis_orthogonality_check(seed: u64) -> CheckReport {
    guarded("dct/basis_orthogonality", seed, || {
        let bases = (0..64)
            .map(|k| dct_basis::<f64>(k / 8, k % 8, 8, 8).map(|b| b.values))
            .collect::<Result<Vec<_>>>()?;
        let mut worst = 0.0_f64;
        for a in 0..64 {
            for b in a + 1..64 {
                let dot: f64 = bases[a].iter().zip(&bases[b]).map(|(x, y)| x * y).sum();
                worst = worst.max(dot.abs());
            }
        }
        Ok(worst)
    }, 1e-9)
}

fn dct_suite(seed: u64) -> Vec<CheckReport> {
    vec![
        dct_oracle_check(seed, 100),
        basis_orthogonality_check(seed),
        guarded("dct/basis_vs_direct_formula", seed, || {
            let mut worst = 0.0_f64;
            for (u, v) in [(0, 0), (1, 0), (0, 1), (2, 3), (7, 7), (3, 5)] {
                let b = dct_basis::<f64>(u, v, 8, 6.max(v + 1))?;
                let o = dct_basis_oracle(u, v, 8, 6.max(v + 1));
                worst = b.values.iter().zip(&o).fold(worst, |m, (p, q)| m.max((p - q).abs()));
            }
            Ok(worst)
        }, 1e-12),
        guarded("dct/inverse_round_trip", seed, || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::<f64>::rand_uniform(Shape::new(2, 2, 8, 5), -1.0, 1.0, &mut rng);
            idct2d(&dct2d(&x)?)?.max_abs_diff(&x)
        }, 1e-12),
    ]
}

fn hfu_suite(seed: u64) -> Vec<CheckReport> {
    vec![
        guarded("hfu/group_filter_vs_loop", seed, || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let freqs = select_frequencies(4, 8, 8, &FrequencyPolicy::ZigzagSkipDc)?;
            let mut store = ParamStore::<f64>::new();
            let hfu = Hfu::new(&mut store, "hfu", HfuConfig::new(16, freqs.clone())?, &mut rng)?;
            let x = Tensor::rand_uniform(Shape::new(2, 16, 8, 8), -1.0, 1.0, &mut rng);
            let mut g = Graph::new(Mode::Eval);
            let xn = g.input(x.clone())?;
            let nodes = hfu.forward_nodes(&mut g, &store, xn)?;
            g.value(nodes.filtered).max_abs_diff(&group_filter_oracle(&x, &freqs.indices))
        }, 1e-15),
        guarded("hfu/attention_mask_open_interval", seed, || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let freqs = select_frequencies(4, 8, 8, &FrequencyPolicy::ZigzagSkipDc)?;
            let mut store = ParamStore::<f64>::new();
            let hfu = Hfu::new(&mut store, "hfu", HfuConfig::new(8, freqs)?, &mut rng)?;
            let x = Tensor::rand_uniform(Shape::new(2, 8, 8, 8), -2.0, 2.0, &mut rng);
            let mut g = Graph::new(Mode::Eval);
            let xn = g.input(x)?;
            let nodes = hfu.forward_nodes(&mut g, &store, xn)?;
            let a = g.value(nodes.attention);
            let ok = a.shape().c() == 1 && a.data().iter().all(|&v| v > 0.0 && v < 1.0);
            Ok(if ok { 0.0 } else { 1.0 })
        }, 0.0),
        grad(hfu_fragment(seed), seed, 1e-4),
    ]
}

pub fn lfu_reparam_checks(seed: u64, extent: usize) -> Vec<CheckReport> {
    let cfg = LfuConfig::default_for(16).expect("default LFU config");
    let seeds: Vec<u64> = (0..20).map(|k| seed.wrapping_add(k)).collect();
    let exact = ReparamOptions { extent, perturb: None };
    let perturbed = ReparamOptions {
        extent,
        perturb: Some(1e-2),
    };
    let started = Instant::now();
    let fault = reparam_equivalence_check::<f64>(&cfg, &seeds[..1], 1e-10, perturbed);
    let single = LfuConfig::new(16, 7, &[(7, 1)]).expect("single branch config");
    vec![
        reparam_equivalence_check::<f64>(&cfg, &seeds, 1e-10, exact),
        reparam_equivalence_check::<f32>(&cfg, &seeds, 1e-4, exact),
        CheckReport::boolean("reparam/fault_injection_detected", !fault.passed() && fault.metric >= 1e-3, seed, started)
            .with_detail(format!("perturbed metric {:.3e}", fault.metric)),
        {
            let mut r = reparam_equivalence_check::<f64>(&single, &seeds[..3], 0.0, exact);
            r.name = "reparam/single_branch_identity".into();
            r
        },
    ]
}

fn lfu_suite(seed: u64) -> Vec<CheckReport> {
    let mut out = lfu_reparam_checks(seed, 32);
    out.push(grad(lfu_fragment(seed, LfuMode::MultiBranch), seed, 1e-4));
    out.push(grad(lfu_fragment(seed, LfuMode::Merged), seed, 1e-4));
    out
}

fn css_suite(seed: u64) -> Vec<CheckReport> {
    let mut out = vec![guarded("css/pre_conv_linearity", seed, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Shape::new(1, 4, 6, 6);
        let mut draw = || -> Vec<Tensor<f64>> { (0..4).map(|_| Tensor::rand_uniform(s, -1.0, 1.0, &mut rng)).collect() };
        let (a, b) = (draw(), draw());
        let ab: Vec<Tensor<f64>> = a.iter().zip(&b).map(|(x, y)| x.zip_map(y, |p, q| p + q)).collect::<Result<_>>()?;
        let z: Vec<Tensor<f64>> = (0..4).map(|_| Tensor::zeros(s)).collect();
        let tap = |t: &[Tensor<f64>]| recouple_inputs(&t[0], &t[1], &t[2], &t[3], false);
        let (ra, rb, rab, rz) = (tap(&a)?, tap(&b)?, tap(&ab)?, tap(&z)?);
        let mut worst = 0.0_f64;
        for (((x, y), xy), zz) in [(&ra.0, &rb.0, &rab.0, &rz.0), (&ra.1, &rb.1, &rab.1, &rz.1)]
            .iter()
            .map(|(a, b, c, d)| (((*a, *b), *c), *d))
        {
            for k in 0..x.len() {
                let r = xy.data()[k] - x.data()[k] - y.data()[k] + zz.data()[k];
                worst = worst.max(r.abs());
            }
        }
        Ok(worst)
    }, 1e-12)];
    out.push(grad(css_fragment(seed), seed, 1e-4));
    for mode in CombinationMode::ALL {
        out.push(grad(stage_fragment(seed, mode), seed, 1e-4));
    }
    out
}

pub fn mask_property_check(seed: u64, trials: u64) -> CheckReport {
    guarded("mrm/mask_invariants", seed, || {
        let configs = [(64, 64, 4, 0.3), (8, 8, 2, 0.3), (16, 12, 2, 0.5), (10, 10, 3, 0.3), (32, 32, 1, 0.2)];
        let mut violations = 0usize;
        for t in 0..trials {
            let (h, w, p, r) = configs[t as usize % configs.len()];
            let s = seed.wrapping_add(t);
            let m = sample_complementary_masks(h, w, r, p, s)?;
            let again = sample_complementary_masks(h, w, r, p, s)?;
            let target = selected_patches(h, w, r, p) * p * p;
            let mut aligned = true;
            for (y, x) in (0..h).flat_map(|y| (0..w).map(move |x| (y, x))) {
                let anchor = ((y / p) * p, (x / p) * p);
                let inside = y < (h / p) * p && x < (w / p) * p;
                for mask in [&m.mask_i, &m.mask_v] {
                    let v = mask[y * w + x];
                    if (!inside && v == 1) || (inside && v != mask[anchor.0 * w + anchor.1]) {
                        aligned = false;
                    }
                }
            }
            if !m.is_disjoint() || m.coverage() != target || !aligned || m != again {
                violations += 1;
            }
        }
        Ok(violations as f64)
    }, 0.0)
}

fn mrm_suite(seed: u64) -> Vec<CheckReport> {
    vec![
        mask_property_check(seed, 1000),
        guarded("mrm/apply_masks_contract", seed, || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = sample_complementary_masks(8, 8, 0.3, 2, seed)?;
            let s = Shape::new(2, 3, 8, 8);
            let (fi, fv) = (Tensor::<f32>::rand_uniform(s, 0.5, 1.0, &mut rng), Tensor::rand_uniform(s, 0.5, 1.0, &mut rng));
            let (oi, ov) = apply_masks(&fi, &fv, &m)?;
            let mut bad = 0usize;
            for (k, ((&a, &b), (&x, &y))) in oi.data().iter().zip(ov.data()).zip(fi.data().iter().zip(fv.data())).enumerate() {
                let p = k % 64;
                let ei = if m.mask_i[p] == 1 { 0.0 } else { x };
                let ev = if m.mask_v[p] == 1 { 0.0 } else { y };
                if a.to_bits() != ei.to_bits() || b.to_bits() != ev.to_bits() {
                    bad += 1;
                }
            }
            Ok(bad as f64)
        }, 0.0),
        guarded("mrm/attention_vs_loop", seed, || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = Shape::new(2, 4, 3, 5);
            let q = Tensor::<f64>::rand_uniform(s, -1.0, 1.0, &mut rng);
            let k = Tensor::rand_uniform(s, -1.0, 1.0, &mut rng);
            let v = Tensor::rand_uniform(s, -1.0, 1.0, &mut rng);
            attention(&q, &k, &v, 0.5)?.max_abs_diff(&attention_oracle(&q, &k, &v, 0.5))
        }, 1e-12),
        grad(cru_fragment(seed), seed, 1e-4),
    ]
}

fn training_suite(seed: u64) -> Vec<CheckReport> {
    vec![
        guarded("training/rc_loss_vs_two_pass", seed, || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let si = Shape::new(2, 1, 8, 8);
            let sv = Shape::new(2, 3, 8, 8);
            let t = |s, rng: &mut ChaCha8Rng| Tensor::<f64>::rand_uniform(s, -1.0, 1.0, rng);
            let (fi, fv, i, v) = (t(si, &mut rng), t(sv, &mut rng), t(si, &mut rng), t(sv, &mut rng));
            Ok((rc_loss(&fi, &fv, &i, &v)? - rc_loss_oracle(&fi, &fv, &i, &v)).abs())
        }, 1e-12),
        guarded("training/sgd_momentum_recursion", seed, || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::<f64>::new();
            let s = Shape::new(1, 2, 2, 2);
            let w0 = Tensor::rand_uniform(s, -1.0, 1.0, &mut rng);
            let id = store.add("w", w0.clone(), true)?;
            let (g1, g2) = (Tensor::rand_uniform(s, -1.0, 1.0, &mut rng), Tensor::rand_uniform(s, -1.0, 1.0, &mut rng));
            let cfg = SgdConfig {
                lr: 0.05,
                momentum: 0.9,
                weight_decay: 0.0,
            };
            let mut opt = Sgd::new(cfg)?;
            store.set_grad(id, g1.clone())?;
            opt.step(&mut store);
            store.set_grad(id, g2.clone())?;
            opt.step(&mut store);
            let expected = Tensor::from_fn(s, |i| {
                let v1 = g1.at(i);
                let v2 = 0.9 * v1 + g2.at(i);
                w0.at(i) - 0.05 * v1 - 0.05 * v2
            });
            store.value(id).max_abs_diff(&expected)
        }, 0.0),
        gradient_flow_check(seed),
        toy_determinism_check(seed),
        grad(encoder_fragment(seed), seed, 1e-4),
        grad(model_fragment(seed), seed, 1e-4),
    ]
}

/// Counts missing gradient paths: the visible-only loss must reach the
/// infrared stem, and the joint loss must reach every encoder and
/// reconstruction unit.
pub fn gradient_flow_check(seed: u64) -> CheckReport {
    guarded("training/gradient_flow", seed, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f64>::new();
        let cfg = EncoderConfig {
            stem_channels: 8,
            stages: 2,
            seed,
            ..EncoderConfig::default()
        };
        let model = ReconstructionModel::new(&mut store, cfg)?;
        let img_i = Tensor::rand_uniform(Shape::new(1, 1, 16, 16), 0.0, 1.0, &mut rng);
        let img_v = Tensor::rand_uniform(Shape::new(1, 3, 16, 16), 0.0, 1.0, &mut rng);
        let masks = sample_complementary_masks(4, 4, 0.3, 1, seed)?;
        let mut missing = 0usize;
        for visible_only in [true, false] {
            store.zero_grads();
            let mut g = Graph::new(Mode::Train);
            let (a, b) = (g.input(img_i.clone())?, g.input(img_v.clone())?);
            let rec = model.forward(&mut g, &store, a, b, Some(&masks))?;
            let loss = if visible_only {
                g.mse(rec.f_v, b)?
            } else {
                let l_rc = rc_loss_graph(&mut g, rec.f_i, rec.f_v, a, b)?;
                total_loss_graph(&mut g, l_rc, None, LossWeights { lambda1: 1.0, lambda2: 0.0 })?
            };
            g.backward(loss, &mut store)?;
            let prefixes: &[&str] = if visible_only { &["enc.stem_ir"] } else { &["enc.stem_ir", "enc.stem_vis", "cru_ir", "cru_vis"] };
            missing += prefixes
                .iter()
                .filter(|p| {
                    let n = store.grad_norm(p);
                    n.is_nan() || n <= 0.0
                })
                .count();
        }
        Ok(missing as f64)
    }, 0.0)
}

/// Two short toy runs from one seed must give bit-identical losses.
pub fn toy_determinism_check(seed: u64) -> CheckReport {
    guarded("training/toy_run_determinism", seed, || {
        let cfg = TrainConfig {
            steps: 3,
            seed,
            data: DataSpec { size: 32, count: 2 },
            ..TrainConfig::default()
        };
        let enc = EncoderConfig {
            stem_channels: 8,
            stages: 2,
            seed,
            ..EncoderConfig::default()
        };
        let a = toy_train_run::<f64>(&cfg, &enc)?;
        let b = toy_train_run::<f64>(&cfg, &enc)?;
        let same = a.losses.len() == b.losses.len()
            && a.losses.iter().zip(&b.losses).all(|(x, y)| x.to_bits() == y.to_bits() && x.is_finite());
        Ok(if same { 0.0 } else { 1.0 })
    }, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_rejected_up_front() {
        assert!(matches!(run_suite(&["dct", "ffu"], 0), Err(Error::UnknownSuite(n)) if n == "ffu"));
    }

    #[test]
    fn all_expands_without_duplicates() {
        assert_eq!(resolve_suites(&["all", "dct"]).unwrap(), SUITES.to_vec());
    }
}
