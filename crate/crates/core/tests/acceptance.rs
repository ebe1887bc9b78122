//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pgdyn::attention::BlockCausalMask;
use pgdyn::dataset::{generate, write_dataset, Dataset, GenerateConfig};
use pgdyn::eval::{euler_window, rollout_rmse, ErrorTable, FrameType};
use pgdyn::ga::{self, Multivector, E1, E2};
use pgdyn::layers::{CliffordLinear, LinearMode};
use pgdyn::model::{ModelConfig, Variant, WorldModel};
use pgdyn::sim::{ContactLabels, EpisodeConfig, ObjectState, Shape, World, WorldConfig};
use pgdyn::tensor::gradcheck::max_relative_error;
use pgdyn::tensor::{Bindings, Graph, ParamStore, Tensor, Var};
use pgdyn::training::{dataset_loss, train, TrainConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_mv(r: &mut impl Rng) -> Multivector {
    Multivector::new(std::array::from_fn(|_| r.gen_range(-1.0..1.0)))
}

fn random_vector(r: &mut impl Rng) -> Multivector {
    let mut m = Multivector::ZERO;
    for i in 1..=3 {
        m[i] = r.gen_range(-1.0..1.0);
    }
    m
}

/// Product of one to three unit reflections.
fn random_versor(r: &mut impl Rng) -> Multivector {
    let count = r.gen_range(1..=3);
    let mut g = Multivector::ONE;
    for _ in 0..count {
        let phi: f64 = r.gen_range(-PI..PI);
        let n = Multivector::reflection(phi.cos(), phi.sin(), r.gen_range(-1.0..1.0));
        g = g.geometric_product(&n);
    }
    g * (1.0 / g.pga_inner(&g).abs().sqrt())
}

// Independent blade algebra: a blade is a sorted list of generators; products
// concatenate, bubble-sort while counting swaps, and contract equal pairs
// with e1² = e2² = 1, e3² = 0.
fn oracle_product(a: &[u8], b: &[u8]) -> Option<(Vec<u8>, i32)> {
    let mut v: Vec<u8> = a.iter().chain(b).copied().collect();
    let mut sign = 1;
    for i in 0..v.len() {
        for j in 0..v.len() - 1 - i {
            if v[j] > v[j + 1] {
                v.swap(j, j + 1);
                sign = -sign;
            }
        }
    }
    let mut out = Vec::new();
    let mut i = 0;
    while i < v.len() {
        if i + 1 < v.len() && v[i] == v[i + 1] {
            if v[i] == 3 {
                return None;
            }
            i += 2;
        } else {
            out.push(v[i]);
            i += 1;
        }
    }
    Some((out, sign))
}

const ORACLE_BLADES: [&[u8]; 8] = [&[], &[1], &[2], &[3], &[1, 2], &[1, 3], &[2, 3], &[1, 2, 3]];

fn algebra_suite() -> Outcome {
    let start = Instant::now();
    let table = ga::structure_table();
    let mut table_ok = true;
    for i in 0..8 {
        for j in 0..8 {
            let expect = oracle_product(ORACLE_BLADES[i], ORACLE_BLADES[j]).map(|(blade, s)| {
                let k = ORACLE_BLADES.iter().position(|b| *b == blade.as_slice()).unwrap();
                (k, s as i8)
            });
            table_ok &= table.entry(i, j) == expect;
        }
    }
    let mut r = rng(1);
    let (mut assoc, mut anti, mut invol, mut comp, mut inner) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let (a, b, c) = (random_mv(&mut r), random_mv(&mut r), random_mv(&mut r));
        assoc = assoc.max((a * b * c).max_abs_diff(&(a * (b * c))));

        let (u, v) = (random_vector(&mut r), random_vector(&mut r));
        let sym = u * v + v * u;
        let metric = Multivector::scalar(2.0 * (u[E1] * v[E1] + u[E2] * v[E2]));
        anti = anti.max(sym.max_abs_diff(&metric));

        invol = invol
            .max(a.grade_involution().grade_involution().max_abs_diff(&a))
            .max(a.reverse().reverse().max_abs_diff(&a))
            .max(a.reverse().grade_involution().max_abs_diff(&a.grade_involution().reverse()))
            .max((a * b).reverse().max_abs_diff(&(b.reverse() * a.reverse())))
            .max((a * b).grade_involution().max_abs_diff(&(a.grade_involution() * b.grade_involution())));

        let (s, t): (f64, f64) = (r.gen_range(-PI..PI), r.gen_range(-PI..PI));
        let twice = a
            .twisted_adjoint(&Multivector::rotor(t))
            .unwrap()
            .twisted_adjoint(&Multivector::rotor(s))
            .unwrap();
        let once = a.twisted_adjoint(&Multivector::rotor(s + t)).unwrap();
        comp = comp
            .max(twice.max_abs_diff(&once))
            .max((Multivector::rotor(s) * Multivector::rotor(t)).max_abs_diff(&Multivector::rotor(s + t)));

        let rotor = Multivector::rotor(s);
        let tr = Multivector::translator(r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0));
        for g in [rotor, tr, rotor * tr] {
            let lhs = a.twisted_adjoint(&g).unwrap().pga_inner(&b.twisted_adjoint(&g).unwrap());
            inner = inner.max((lhs - a.pga_inner(&b)).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = table_ok && assoc <= 1e-12 && anti <= 1e-12 && invol <= 1e-12 && comp <= 1e-10 && inner <= 1e-10 && secs < 10.0;
    outcome(
        pass,
        format!(
            "table matches oracle: {table_ok}; 1000 cases each: assoc {assoc:.1e}, anticomm {anti:.1e}, \
             involutions {invol:.1e}, rotor composition {comp:.1e}, inner invariance {inner:.1e}; {secs:.2}s (< 10s)"
        ),
    )
}

fn rotation_exactness() -> Outcome {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let theta: f64 = r.gen_range(-PI..PI);
        let (x, y): (f64, f64) = (r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0));
        let mut v = Multivector::ZERO;
        v[E1] = x;
        v[E2] = y;
        let mut expect = Multivector::ZERO;
        expect[E1] = theta.cos() * x - theta.sin() * y;
        expect[E2] = theta.sin() * x + theta.cos() * y;
        worst = worst.max(v.twisted_adjoint(&Multivector::rotor(theta)).unwrap().max_abs_diff(&expect));
    }
    outcome(worst <= 1e-12, format!("100 random (θ, x, y): max deviation {worst:.1e} (tol 1e-12)"))
}

fn act(t: &Tensor, g: &Multivector) -> Tensor {
    let data = t
        .data()
        .chunks(8)
        .flat_map(|c| Multivector::new(c.try_into().unwrap()).twisted_adjoint(g).unwrap().0)
        .collect();
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_tensor(r: &mut impl Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

/// Largest `|f(g·x) - g·f(x)|` over `versors`.
fn violation(f: &dyn Fn(&Tensor) -> Tensor, x: &Tensor, versors: &[Multivector]) -> f64 {
    let fx = f(x);
    versors
        .iter()
        .map(|g| max_diff(&f(&act(x, g)), &act(&fx, g)))
        .fold(0.0, f64::max)
}

fn equivariance_dichotomy() -> Outcome {
    let mut r = rng(3);
    let versors: Vec<Multivector> = (0..100).map(|_| random_versor(&mut r)).collect();
    let x = random_tensor(&mut r, &[3, 4, 8]);
    let linear = |mode: LinearMode, r: &mut ChaCha8Rng| {
        let mut store = ParamStore::new();
        let lin = CliffordLinear::new(&mut store, "lin", 4, 5, mode, r);
        move |t: &Tensor| {
            let mut g = Graph::new();
            let p = store.bind(&mut g, false);
            let v = g.constant(t.clone());
            let y = lin.forward(&mut g, &p, v).unwrap();
            g.value(y).clone()
        }
    };
    let tokens = random_tensor(&mut r, &[1, 6, 4, 8]);
    let blocks = |variant: Variant| {
        let model = WorldModel::new(ModelConfig {
            variant,
            blocks: 2,
            heads: 2,
            channels: 4,
            seq_len: 2,
            objects: 3,
            seed: 7,
            ..ModelConfig::default()
        })
        .unwrap();
        move |t: &Tensor| {
            let mut g = Graph::new();
            let p = model.params.bind(&mut g, false);
            let v = g.constant(t.clone());
            let y = model.forward_blocks(&mut g, &p, v, &BlockCausalMask::new(2, 3)).unwrap();
            g.value(y).clone()
        }
    };
    let e_lin = violation(&linear(LinearMode::E, &mut r), &x, &versors);
    let e_blocks = violation(&blocks(Variant::E), &tokens, &versors);
    let s_lin = violation(&linear(LinearMode::S, &mut r), &x, &versors);
    let sad_lin = violation(&linear(LinearMode::SAd, &mut r), &x, &versors);
    let s_blocks = violation(&blocks(Variant::S), &tokens, &versors);
    let sad_blocks = violation(&blocks(Variant::SAd), &tokens, &versors);
    let pass = e_lin <= 1e-6 && e_blocks <= 1e-6 && s_lin > 1e-3 && sad_lin > 1e-3;
    outcome(
        pass,
        format!(
            "100 unit versors: E linear {e_lin:.1e}, E blocks {e_blocks:.1e} (tol 1e-6); \
             witnesses S linear {s_lin:.2e}, S-Ad linear {sad_lin:.2e} (> 1e-3); \
             blocks S {s_blocks:.2e}, S-Ad {sad_blocks:.2e}"
        ),
    )
}

type GradFn = Box<dyn Fn(&mut Graph, &[Var]) -> pgdyn::Result<Var>>;

/// Reduces an op output to a scalar with fixed random weights.
fn weighted(g: &mut Graph, y: Var, seed: u64) -> pgdyn::Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = g.constant(random_tensor(&mut rng(seed), &shape));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn op_cases() -> Vec<(String, Vec<Tensor>, GradFn)> {
    let mut r = rng(4);
    let mut cases: Vec<(String, Vec<Tensor>, GradFn)> = Vec::new();
    let shapes: [&[usize]; 3] = [&[5], &[3, 4], &[2, 3, 4]];
    for (i, shape) in shapes.iter().enumerate() {
        let s = i as u64;
        let a = random_tensor(&mut r, shape);
        let b = random_tensor(&mut r, shape);
        let away_from_kink = Tensor::from_fn(shape, |j| if j % 2 == 0 { 0.3 + j as f64 * 0.1 } else { -0.2 - j as f64 * 0.1 });
        let last = shape[shape.len() - 1];
        let suffix = random_tensor(&mut r, &[last]);
        let two = vec![a.clone(), b.clone()];
        let one = vec![a.clone()];
        cases.push((format!("add {shape:?}"), two.clone(), Box::new(move |g, v| { let y = g.add(v[0], v[1])?; weighted(g, y, s) })));
        cases.push((format!("sub {shape:?}"), two.clone(), Box::new(move |g, v| { let y = g.sub(v[0], v[1])?; weighted(g, y, s) })));
        cases.push((format!("mul {shape:?}"), two.clone(), Box::new(move |g, v| { let y = g.mul(v[0], v[1])?; weighted(g, y, s) })));
        cases.push((format!("scale {shape:?}"), one.clone(), Box::new(move |g, v| { let y = g.scale(v[0], -1.7); weighted(g, y, s) })));
        cases.push((format!("add_suffix {shape:?}"), vec![a.clone(), suffix], Box::new(move |g, v| { let y = g.add_suffix(v[0], v[1])?; weighted(g, y, s) })));
        cases.push((format!("sigmoid {shape:?}"), one.clone(), Box::new(move |g, v| { let y = g.sigmoid(v[0]); weighted(g, y, s) })));
        cases.push((format!("relu {shape:?}"), vec![away_from_kink], Box::new(move |g, v| { let y = g.relu(v[0]); weighted(g, y, s) })));
        let n: usize = shape.iter().product();
        cases.push((format!("reshape {shape:?}"), one.clone(), Box::new(move |g, v| { let y = g.reshape(v[0], &[n])?; weighted(g, y, s) })));
        cases.push((format!("sum {shape:?}"), one.clone(), Box::new(move |g, v| { let y = g.mul(v[0], v[0])?; Ok(g.sum(y)) })));
        cases.push((format!("mean {shape:?}"), one.clone(), Box::new(move |g, v| { let y = g.mul(v[0], v[0])?; Ok(g.mean(y)) })));
        cases.push((format!("l2_loss {shape:?}"), two.clone(), Box::new(move |g, v| g.l2_loss(v[0], v[1]))));
    }
    let contracts: [(&str, &[usize], &[usize]); 4] = [
        ("ij,jk->ik", &[3, 4], &[4, 2]),
        ("rib,oibk->rok", &[2, 3, 8], &[4, 3, 8, 8]),
        ("bqhcx,bkhcx->bhqk", &[1, 3, 2, 2, 8], &[1, 3, 2, 2, 8]),
        ("oi,b->oib", &[3, 2], &[8]),
    ];
    for (spec, sa, sb) in contracts {
        let inputs = vec![random_tensor(&mut r, sa), random_tensor(&mut r, sb)];
        cases.push((format!("contract {spec}"), inputs, Box::new(move |g, v| { let y = g.contract(spec, v[0], v[1])?; weighted(g, y, 9) })));
    }
    for (steps, objects, lead) in [(2usize, 2usize, 1usize), (3, 1, 2), (2, 3, 3)] {
        let mask = BlockCausalMask::new(steps, objects);
        let n = mask.len();
        let scores = random_tensor(&mut r, &[lead, n, n]);
        cases.push((
            format!("softmax_masked {lead}x{n}x{n}"),
            vec![scores],
            Box::new(move |g, v| { let y = g.softmax_masked(v[0], mask.shared())?; weighted(g, y, 11) }),
        ));
    }
    cases
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst_op = (0.0f64, String::new());
    for (name, inputs, f) in op_cases() {
        let e = max_relative_error(&inputs, 1, f).unwrap();
        if e >= worst_op.0 {
            worst_op = (e, name);
        }
    }
    let data = generate(&GenerateConfig {
        objects: "2xcircle".into(),
        episodes: 1,
        seed: 5,
        world: WorldConfig::default(),
        episode: EpisodeConfig { frames: 8, ..Default::default() },
    })
    .unwrap();
    let mut per_variant = Vec::new();
    let mut worst_variant = 0.0f64;
    for variant in Variant::ALL {
        let model = WorldModel::new(ModelConfig {
            variant,
            blocks: 1,
            heads: 2,
            channels: 4,
            seq_len: 2,
            objects: 2,
            embed_dim: variant.is_transformer().then_some(8).filter(|_| variant == Variant::Transformer),
            hidden: matches!(variant, Variant::Transformer | Variant::Mlp).then_some(8),
            seed: 6,
            ..ModelConfig::default()
        })
        .unwrap();
        let windows = [(0usize, 0usize), (0, 3)];
        let (x, y) = pgdyn::training::make_batch(&data, &windows, model.config()).unwrap();
        let params: Vec<Tensor> = model.params.named_values().map(|(_, t)| t.clone()).collect();
        let total: usize = params.iter().map(|t| t.numel()).sum();
        let stride = (total / 400).max(1);
        let e = max_relative_error(&params, stride, |g, vars| {
            let p = Bindings::from_vars(vars.to_vec());
            model.loss(g, &p, &x, &y)
        })
        .unwrap();
        worst_variant = worst_variant.max(e);
        per_variant.push(format!("{} {e:.1e}", variant.name()));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_op.0 < 1e-4 && worst_variant < 1e-4 && secs < 60.0;
    outcome(
        pass,
        format!(
            "ops worst {:.1e} ({}); losses: {}; tol 1e-4; {secs:.1}s (< 60s)",
            worst_op.0,
            worst_op.1,
            per_variant.join(", ")
        ),
    )
}

fn block_causality() -> Outcome {
    let (steps, objects) = (4, 3);
    let mut r = rng(8);
    let mut failures = Vec::new();
    for variant in Variant::ALL {
        let model = WorldModel::new(ModelConfig {
            variant,
            blocks: 2,
            heads: 2,
            channels: 4,
            seq_len: steps,
            objects,
            seed: 9,
            ..ModelConfig::default()
        })
        .unwrap();
        let cin = model.config().input_channels();
        let x = random_tensor(&mut r, &[2, steps, objects, cin, 8]);
        let base = model.predict(&x).unwrap();
        let per_step = objects * 4 * 8;
        let mut ok = true;
        for perturbed in 1..steps {
            let mut xp = x.clone();
            let block = objects * cin * 8;
            for b in 0..2 {
                let off = (b * steps + perturbed) * block;
                for v in &mut xp.data_mut()[off..off + block] {
                    *v += r.gen_range(-1.0..1.0);
                }
            }
            let out = model.predict(&xp).unwrap();
            for b in 0..2 {
                for s in 0..perturbed {
                    let off = (b * steps + s) * per_step;
                    ok &= base.data()[off..off + per_step] == out.data()[off..off + per_step];
                }
                let off = (b * steps + perturbed) * per_step;
                // the perturbed step itself must react, or the check is vacuous
                ok &= base.data()[off..off + per_step] != out.data()[off..off + per_step];
            }
        }
        if !ok {
            failures.push(variant.name());
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "S=4, K=3, all {} variants: earlier outputs bit-identical under later perturbations{}",
            Variant::ALL.len(),
            if failures.is_empty() { String::new() } else { format!("; violated by {failures:?}") }
        ),
    )
}

fn vacuum() -> WorldConfig {
    WorldConfig {
        gravity: 0.0,
        linear_damping: 1.0,
        angular_damping: 1.0,
        friction: 0.0,
        arena: [-10.0, -10.0, 10.0, 10.0],
        ..WorldConfig::default()
    }
}

fn simulator_physics() -> Outcome {
    // elastic oblique collision of unequal circles
    let shapes = [Shape::Circle { radius: 0.1 }, Shape::Circle { radius: 0.06 }];
    let states = [
        ObjectState { x: -0.5, y: 0.03, vx: 1.5, vy: 0.2, ..Default::default() },
        ObjectState { x: 0.4, y: 0.0, vx: -1.0, vy: 0.1, ..Default::default() },
    ];
    let mut w = World::from_states(vacuum(), &shapes, &states).unwrap();
    let (p0, e0) = (w.momentum(), w.kinetic_energy());
    let mut collided = false;
    for _ in 0..60 {
        collided |= w.step().unwrap().object_object;
    }
    let (p1, e1) = (w.momentum(), w.kinetic_energy());
    let pnorm = p0[0].hypot(p0[1]);
    let dp = (p1[0] - p0[0]).hypot(p1[1] - p0[1]) / pnorm;
    let de = (e1 - e0).abs() / e0;

    // wall rebound measured on the substep that resolves the contact
    let world = WorldConfig::default();
    let mut ratios = Vec::new();
    for (vx, vy) in [(0.0, -3.0), (2.5, 0.0), (-1.8, 0.0), (0.7, -2.0)] {
        let s = ObjectState { x: 0.5, y: 0.5, vx, vy, ..Default::default() };
        let mut w = World::from_states(world.clone(), &[Shape::Circle { radius: 0.08 }], &[s]).unwrap();
        for _ in 0..20_000 {
            let before = w.states()[0];
            let contacts = w.substep().unwrap();
            if let Some(c) = contacts.first() {
                let n = c.normal;
                let vy_in = (before.vy - world.gravity * world.dt) * world.linear_damping;
                let vx_in = before.vx * world.linear_damping;
                let after = w.states()[0];
                let v_in = vx_in * n[0] + vy_in * n[1];
                let v_out = after.vx * n[0] + after.vy * n[1];
                ratios.push(-v_out / v_in);
                break;
            }
        }
    }
    let rebound_ok = ratios.len() == 4 && ratios.iter().all(|r| (r - 0.9).abs() <= 0.9 * 0.02);

    // containment and determinism of generated data
    let cfg = GenerateConfig {
        objects: "6xcircle+4xrect".into(),
        episodes: 8,
        seed: 11,
        world: WorldConfig::default(),
        episode: EpisodeConfig::default(),
    };
    let data = generate(&cfg).unwrap();
    let arena = cfg.world.arena;
    let mut worst_escape = 0.0f64;
    for ep in &data.episodes {
        for frame in &ep.frames {
            for (s, shape) in frame.iter().zip(&ep.shapes) {
                let [hx, hy] = shape.aabb_half(s.theta);
                worst_escape = worst_escape
                    .max(arena[0] - (s.x - hx))
                    .max(arena[1] - (s.y - hy))
                    .max((s.x + hx) - arena[2])
                    .max((s.y + hy) - arena[3]);
            }
        }
    }
    fn bytes(d: &Dataset) -> Vec<u8> {
        let mut buf = Vec::new();
        write_dataset(&mut buf, d).unwrap();
        buf
    }
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let reference = bytes(&data);
    let deterministic = bytes(&single.install(|| generate(&cfg)).unwrap()) == reference
        && bytes(&four.install(|| generate(&cfg)).unwrap()) == reference;

    let pass = collided && dp <= 1e-6 && de <= 1e-3 && rebound_ok && worst_escape <= 1e-3 && deterministic;
    outcome(
        pass,
        format!(
            "collision (occurred: {collided}): momentum rel {dp:.1e} (1e-6), energy rel {de:.1e} (1e-3); \
             wall rebound ratios {ratios:.4?} (0.9 ± 2%); max arena escape {worst_escape:.1e} m (1e-3); \
             bit-identical regeneration on 1 and 4 threads: {deterministic}"
        ),
    )
}

fn metric_self_consistency() -> Outcome {
    let cfg = GenerateConfig {
        objects: "3xcircle+2xrect".into(),
        episodes: 3,
        seed: 12,
        world: WorldConfig::default(),
        episode: EpisodeConfig { frames: 40, ..Default::default() },
    };
    let data = generate(&cfg).unwrap();
    let mut euler = ErrorTable::new(data.objects);
    for ep in &data.episodes {
        euler.append(euler_window(&ep.frames, &ep.labels, &ep.shapes, &cfg.world).unwrap());
    }
    let euler_gt = euler.rmse(39, None).unwrap();

    // perturbed predictions give a table with every label kind
    let mut r = rng(13);
    let mut table = ErrorTable::new(data.objects);
    for ep in &data.episodes {
        let preds: Vec<Vec<ObjectState>> = ep
            .frames
            .iter()
            .map(|f| {
                f.iter()
                    .map(|s| ObjectState { x: s.x + r.gen_range(-0.1..0.1), omega: s.omega + r.gen_range(-0.5..0.5), ..*s })
                    .collect()
            })
            .collect();
        table.push_window(&preds, &ep.frames, &ep.labels).unwrap();
    }
    let n = 39;
    let total = table.mass(n, FrameType::All, None).unwrap();
    let parts = table.mass(n, FrameType::Free, None).unwrap()
        + table.mass(n, FrameType::ObjectWall, None).unwrap()
        + table.mass(n, FrameType::ObjectObject, None).unwrap();
    let both: f64 = table
        .windows()
        .iter()
        .flat_map(|w| &w[1..=n])
        .filter(|e| e.label.object_wall && e.label.object_object)
        .map(|e| e.sq.iter().sum::<f64>())
        .sum();
    let recombine = (parts - both - total).abs();

    // 3-frame example by hand: x errors 0, 0.1, -0.2; θ error π/2 at t = 2;
    // ω error 0.3 at t = 1
    let zero = ObjectState::default();
    let targets = vec![vec![zero]; 3];
    let mut preds = targets.clone();
    preds[1][0].x = 0.1;
    preds[1][0].omega = 0.3;
    preds[2][0].x = -0.2;
    preds[2][0].theta = PI / 2.0;
    let got = rollout_rmse(&preds, &targets, 2).unwrap();
    // N = 2, N_vars = 7: (0.01 + 0.09 + 0.04 + 1 + 1) / 14
    let hand = (2.14f64 / 14.0).sqrt();
    let labels = [ContactLabels::FREE; 3];
    let mut t = ErrorTable::new(1);
    t.push_window(&preds, &targets, &labels).unwrap();
    let pass = euler_gt <= 1e-9 && recombine <= 1e-10 && got == hand && t.rmse(2, None).unwrap() == hand;
    outcome(
        pass,
        format!(
            "Euler RMSE of ground truth {euler_gt:.1e} (1e-9); frame-type recombination residual {recombine:.1e} \
             (1e-10, double-labelled mass {both:.3}); 3-frame example {got:.15} vs hand {hand:.15}"
        ),
    )
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let data = generate(&GenerateConfig {
        objects: "2xcircle".into(),
        episodes: 1,
        seed: 0,
        world: WorldConfig::default(),
        episode: EpisodeConfig::default(),
    })
    .unwrap();
    let mut model = WorldModel::new(ModelConfig {
        variant: Variant::S,
        blocks: 2,
        heads: 4,
        channels: 8,
        seq_len: 2,
        objects: 2,
        ..ModelConfig::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 500,
        batch_size: 2,
        lr: 2e-3,
        cosine_decay: true,
        ..TrainConfig::default()
    };
    let initial = dataset_loss(&model, &data, 32).unwrap();
    train(&mut model, &data, None, &cfg, |_| Ok(())).unwrap();
    let last = dataset_loss(&model, &data, 32).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        last < 1e-3 && secs < 600.0,
        format!(
            "S, 2 blocks, 8 channels, one 2-circle episode, 500 epochs: teacher-forced loss {initial:.3e} -> {last:.3e} \
             (< 1e-3); {secs:.0}s (< 600s)"
        ),
    )
}

fn parameter_matching() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for (blocks, heads, channels, objects) in [(2, 4, 8, 4), (2, 4, 8, 10), (10, 8, 24, 10)] {
        let cfg = |variant| ModelConfig { variant, blocks, heads, channels, objects, ..ModelConfig::default() };
        let s = WorldModel::new(cfg(Variant::S)).unwrap().num_params();
        let t = WorldModel::new(cfg(Variant::Transformer)).unwrap().num_params();
        let rel = (t as f64 - s as f64).abs() / s as f64;
        pass &= rel <= 0.02;
        lines.push(format!("K{objects} B{blocks}/H{heads}/C{channels}: S {s}, transformer {t} ({:.2}%)", rel * 100.0));
    }
    outcome(pass, format!("{} (tol 2%)", lines.join("; ")))
}

/// Verdict of the last run of the trend target, and whether it used the
/// full one-hour budget.
fn recorded_trend() -> Option<(String, bool)> {
    let text = std::fs::read_to_string(concat!(env!("CARGO_TARGET_TMPDIR"), "/trend-result.txt")).ok()?;
    let (budget, line) = text.trim_end().split_once('\n')?;
    Some((line.to_string(), budget.parse::<f64>().ok()? >= 3600.0))
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Outcome); 9] = [
        ("algebra suite", algebra_suite),
        ("rotation example exactness", rotation_exactness),
        ("equivariance dichotomy", equivariance_dichotomy),
        ("gradient suite", gradient_suite),
        ("block causality", block_causality),
        ("simulator physics", simulator_physics),
        ("metric self-consistency", metric_self_consistency),
        ("overfit sanity", overfit),
        ("parameter matching", parameter_matching),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let o = check();
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if filter.is_empty() || filter.iter().any(|f| "trend check".contains(f.as_str())) {
        match recorded_trend() {
            Some((line, full)) => {
                println!("{line}{}", if full { "" } else { " [shortened budget]" });
                failed += usize::from(full && !line.starts_with("PASS"));
            }
            None => println!("NOT RUN trend check: `cargo test -p pgdyn-core --test trend` trains for an hour per model"),
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
