//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapeflow_core::bayes::{CausalMap, Edge, Evidence, Level};
use shapeflow_core::fixtures::drone_walk_config;
use shapeflow_core::grammar::walk::{HostPolicy, WalkConfig};
use shapeflow_core::grammar::*;
use shapeflow_core::nn::{Conv1dSpec, Tape, Tensor, Var};
use shapeflow_core::transformer::{CompleterModel, EOS};

/// Random tensor whose entries stay at least 0.05 away from zero, so
/// piecewise-linear activations are not probed across their kink.
pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Largest relative disagreement between backprop and central differences
/// (step 1e-3) of `Σ r ⊙ f(inputs)` for a fixed random `r`.
pub fn grad_check<F>(inputs: &[Tensor], seed: u64, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe_shape = {
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| t.constant(x.clone())).collect();
        let out = f(&mut t, &vars);
        t.value(out).shape.clone()
    };
    let r = rand_tensor(&mut rng, &probe_shape);
    let eval = |xs: &[Tensor]| -> (Tape, Vec<Var>, Var) {
        let mut t = Tape::new();
        let vars: Vec<Var> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| t.leaf(&format!("x{i}"), x.clone()))
            .collect();
        let out = f(&mut t, &vars);
        let rv = t.constant(r.clone());
        let prod = t.mul(out, rv);
        let loss = t.sum(prod);
        (t, vars, loss)
    };
    let (tape, vars, loss) = eval(inputs);
    let grads = tape.backward(loss);
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).map(|g| g.to_vec()).unwrap_or(vec![0.0; x.len()]);
        for j in 0..x.len() {
            let mut plus = inputs.to_vec();
            plus[i].data[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data[j] -= h;
            let fp = {
                let (t, _, l) = eval(&plus);
                t.value(l).item()
            };
            let fm = {
                let (t, _, l) = eval(&minus);
                t.value(l).item()
            };
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[j];
            let denom = a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

fn check(
    out: &mut Vec<(&'static str, f64)>,
    name: &'static str,
    inputs: &[Tensor],
    f: impl Fn(&mut Tape, &[Var]) -> Var,
) {
    out.push((name, grad_check(inputs, 11, f)));
}

/// Worst relative gradient error of every layer, by name.
pub fn layer_gradient_errors() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut r = |shape: &[usize]| rand_tensor(&mut rng, shape);

    check(&mut out, "dense", &[r(&[3, 4]), r(&[4, 5]), r(&[5])], |t, v| t.dense(v[0], v[1], v[2]));
    check(&mut out, "add", &[r(&[2, 3]), r(&[2, 3])], |t, v| t.add(v[0], v[1]));
    check(&mut out, "mul", &[r(&[2, 3]), r(&[2, 3])], |t, v| t.mul(v[0], v[1]));
    check(&mut out, "scale", &[r(&[5])], |t, v| t.scale(v[0], -1.7));
    check(&mut out, "relu", &[r(&[3, 4])], |t, v| t.relu(v[0]));
    check(&mut out, "leaky_relu", &[r(&[3, 4])], |t, v| t.leaky_relu(v[0], 0.2));
    check(&mut out, "sigmoid", &[r(&[3, 4])], |t, v| t.sigmoid(v[0]));
    check(&mut out, "tanh", &[r(&[3, 4])], |t, v| t.tanh(v[0]));
    check(&mut out, "softmax", &[r(&[3, 5])], |t, v| t.softmax(v[0]));
    check(&mut out, "layer_norm", &[r(&[3, 6]), r(&[6]), r(&[6])], |t, v| {
        t.layer_norm(v[0], v[1], v[2])
    });
    check(&mut out, "embedding", &[r(&[5, 3])], |t, v| t.embedding(v[0], &[4, 0, 4, 2]));
    let s2 = Conv1dSpec {
        stride: 2,
        padding: 1,
    };
    check(&mut out, "conv1d", &[r(&[2, 3, 8]), r(&[4, 3, 4]), r(&[4])], |t, v| {
        t.conv1d(v[0], v[1], v[2], s2)
    });
    check(
        &mut out,
        "conv_transpose1d",
        &[r(&[2, 3, 4]), r(&[3, 2, 4]), r(&[2])],
        |t, v| t.conv_transpose1d(v[0], v[1], v[2], s2),
    );
    check(&mut out, "causal_attention", &[r(&[2 * 4, 12])], |t, v| {
        t.causal_attention(v[0], 2, 4, 2)
    });
    check(&mut out, "reshape", &[r(&[2, 6])], |t, v| t.reshape(v[0], &[3, 4]));
    check(&mut out, "concat_channels", &[r(&[2, 3, 4]), r(&[2, 1, 4])], |t, v| {
        t.concat_channels(v[0], v[1])
    });
    check(&mut out, "batch_std", &[r(&[3, 2, 4])], |t, v| t.batch_std(v[0]));
    check(&mut out, "cross_entropy", &[r(&[4, 6])], |t, v| {
        t.cross_entropy(v[0], &[Some(1), None, Some(5), Some(0)])
    });
    check(&mut out, "bce_with_logits", &[r(&[6])], |t, v| {
        t.bce_with_logits(v[0], &[1.0, 0.0, 1.0, 0.0, 0.3, 0.9])
    });
    check(&mut out, "sum", &[r(&[2, 3])], |t, v| t.sum(v[0]));
    check(&mut out, "mean", &[r(&[2, 3])], |t, v| t.mean(v[0]));
    check(
        &mut out,
        "two_layer_net",
        &[r(&[4, 3]), r(&[3, 5]), r(&[5]), r(&[5, 2]), r(&[2])],
        |t, v| {
            let h = t.dense(v[0], v[1], v[2]);
            let h = t.tanh(h);
            t.dense(h, v[3], v[4])
        },
    );
    out
}


pub fn sigma(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Brute-force posterior straight from the causal map, summing the full joint.
pub fn enumerate(m: &CausalMap, ev: &Evidence) -> f64 {
    let n = m.nodes.len();
    let idx = |name: &str| m.nodes.iter().position(|x| x == name).unwrap();
    let sink = idx(&m.sink);
    let (mut high, mut total) = (0.0, 0.0);
    'assign: for bits in 0..1u32 << n {
        let on = |i: usize| bits >> i & 1 == 1;
        for (name, level) in ev {
            if on(idx(name)) != (*level == Level::High) {
                continue 'assign;
            }
        }
        let mut p = 1.0;
        for (i, name) in m.nodes.iter().enumerate() {
            let mut x = m.biases.get(name).copied().unwrap_or(0.0);
            for e in m.edges.iter().filter(|e| e.to == *name) {
                x += if on(idx(&e.from)) { e.weight } else { -e.weight };
            }
            let ph = sigma(x);
            p *= if on(i) { ph } else { 1.0 - ph };
        }
        total += p;
        if on(sink) {
            high += p;
        }
    }
    high / total
}

/// Random DAG over `n` nodes where every node but the last feeds a later node.
pub fn random_map(rng: &mut ChaCha8Rng, n: usize, positive: bool) -> CausalMap {
    let nodes: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
    let mut edges = Vec::new();
    for i in 0..n.saturating_sub(1) {
        let mut targets = vec![rng.gen_range(i + 1..n)];
        for j in i + 1..n {
            if rng.gen_bool(0.3) && !targets.contains(&j) {
                targets.push(j);
            }
        }
        for j in targets {
            let w: f64 = rng.gen_range(-1.0..=1.0);
            edges.push(Edge {
                from: nodes[i].clone(),
                to: nodes[j].clone(),
                weight: if positive { w.abs() } else { w },
            });
        }
    }
    let mut biases = BTreeMap::new();
    for name in &nodes {
        if rng.gen_bool(0.7) {
            biases.insert(name.clone(), rng.gen_range(-2.0..2.0));
        }
    }
    CausalMap {
        sink: nodes[n - 1].clone(),
        nodes,
        edges,
        biases,
    }
}

pub fn random_evidence(rng: &mut ChaCha8Rng, m: &CausalMap, observed: usize) -> Evidence {
    let mut candidates: Vec<&String> = m.nodes.iter().filter(|n| **n != m.sink).collect();
    let mut ev = Evidence::new();
    for _ in 0..observed.min(candidates.len()) {
        let name = candidates.swap_remove(rng.gen_range(0..candidates.len()));
        ev.insert(name.clone(), Level::from_bool(rng.gen_bool(0.5)));
    }
    ev
}

pub const PRIMS: [Primitive; 4] = [
    Primitive::Box,
    Primitive::Cylinder,
    Primitive::Sphere,
    Primitive::ExtrusionProfile,
];

pub fn num(rng: &mut ChaCha8Rng) -> f64 {
    match rng.gen_range(0..3) {
        0 => f64::from(rng.gen_range(-50i32..50)),
        1 => f64::from(rng.gen_range(-400i32..400)) / 8.0,
        _ => rng.gen_range(-1000.0..1000.0),
    }
}

pub fn param(rng: &mut ChaCha8Rng, name: String) -> ParamSpec {
    if rng.gen_bool(0.25) {
        let lo = f64::from(rng.gen_range(0i32..5));
        ParamSpec::integer(&name, "count", lo, lo + f64::from(rng.gen_range(0i32..4)))
    } else {
        let lo = rng.gen_range(0.5..100.0);
        ParamSpec::continuous(&name, "mm", lo, lo + rng.gen_range(0.0..200.0))
    }
}

pub fn expr(rng: &mut ChaCha8Rng, names: &[String]) -> LinearExpr {
    let n = rng.gen_range(0..=names.len().min(2));
    let picked: Vec<String> = names.choose_multiple(rng, n).cloned().collect();
    LinearExpr {
        terms: picked.into_iter().map(|s| (num(rng), s)).collect(),
        constant: num(rng),
    }
}

/// A random well-formed grammar.
pub fn random_grammar(seed: u64) -> Grammar {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape_types: Vec<String> = (0..rng.gen_range(1..4)).map(|i| format!("kind {i}")).collect();
    let n_units = rng.gen_range(1..6);
    let mut units = Vec::new();
    for u in 0..n_units {
        let primitive = *PRIMS.choose(&mut rng).unwrap();
        let size_params: Vec<_> = (0..primitive.arity())
            .map(|i| param(&mut rng, format!("s{i}")))
            .collect();
        let names: Vec<String> = size_params.iter().map(|p| p.name.clone()).collect();
        let n_ports = if u == 0 { rng.gen_range(0..3) } else { rng.gen_range(1..3) };
        let ports = (0..n_ports)
            .map(|i| Port {
                name: format!("p{i}"),
                position: [expr(&mut rng, &names), expr(&mut rng, &names), expr(&mut rng, &names)],
                rotation: if rng.gen_bool(0.5) {
                    [0.0; 3]
                } else {
                    [num(&mut rng), num(&mut rng), num(&mut rng)]
                },
            })
            .collect();
        units.push(ShapeUnit {
            name: format!("u{u}"),
            primitive,
            anchor: if rng.gen_bool(0.5) { Anchor::Base } else { Anchor::Center },
            size_params,
            ports,
        });
    }
    let hosts: Vec<(String, String)> = units
        .iter()
        .flat_map(|u| u.ports.iter().map(|p| (u.name.clone(), p.name.clone())))
        .collect();
    let mut rules = Vec::new();
    if !hosts.is_empty() {
        for r in 0..rng.gen_range(0..6) {
            let (hu, hp) = hosts.choose(&mut rng).unwrap().clone();
            let adds = &units[rng.gen_range(0..units.len())];
            let mut params = Vec::new();
            for p in &adds.size_params {
                if rng.gen_bool(0.5) {
                    params.push(param(&mut rng, p.name.clone()));
                }
            }
            rules.push(Rule {
                id: format!("r{r}"),
                adds_unit: adds.name.clone(),
                host: HostPort { unit: hu, port: hp },
                params,
                symmetry_count: *[1, 1, 2, 3, 4].choose(&mut rng).unwrap(),
            });
        }
    }
    let mut constraints = Vec::new();
    for c in 0..rng.gen_range(0..6) {
        let kind = match rng.gen_range(0..5) {
            0 => {
                let unit = &units[rng.gen_range(0..units.len())].name;
                let addable = rules.iter().any(|r| r.adds_unit == *unit);
                let floor = u32::from(*unit == units[0].name);
                let lo = if addable { rng.gen_range(0..3) } else { rng.gen_range(0..=floor) };
                ConstraintKind::CountRange {
                    unit: unit.clone(),
                    lo,
                    hi: lo.max(floor) + rng.gen_range(0..3),
                    shape_type: rng.gen_bool(0.5).then(|| shape_types.choose(&mut rng).unwrap().clone()),
                }
            }
            1 if rules.len() >= 2 => {
                let pair: Vec<_> = rules.choose_multiple(&mut rng, 2).collect();
                ConstraintKind::Requires {
                    rule: pair[0].id.clone(),
                    needs: pair[1].id.clone(),
                }
            }
            2 if rules.len() >= 2 => {
                let pair: Vec<_> = rules.choose_multiple(&mut rng, 2).collect();
                ConstraintKind::Excludes {
                    a: pair[0].id.clone(),
                    b: pair[1].id.clone(),
                }
            }
            3 => {
                let names: Vec<String> = units
                    .iter()
                    .flat_map(|u| u.size_params.iter().map(move |p| format!("{}.{}", u.name, p.name)))
                    .collect();
                let mut lhs = expr(&mut rng, &names);
                if lhs.terms.is_empty() {
                    lhs.terms.push((1.0, names[0].clone()));
                }
                // generous bound so the relation is always satisfiable
                ConstraintKind::ParamRelation {
                    lhs,
                    op: RelOp::Le,
                    rhs: 1e9,
                }
            }
            _ => ConstraintKind::NoCollision,
        };
        constraints.push(Constraint {
            id: format!("c{c}"),
            kind,
        });
    }
    Grammar {
        product_kind: "Widget".into(),
        shape_types,
        axiom: "u0".into(),
        units,
        rules,
        constraints,
    }
}

pub const CHAIN: &str = r#"
product Chain
shape-type "chain"
axiom root

unit root box center
  size sx mm [10, 10]
  size sy mm [10, 10]
  size sz mm [10, 10]
  port end at (0.5*sx, 0, 0)
end

unit l1 box
  size length mm [20, 20]
  size w mm [4, 4]
  size h mm [4, 4]
  port end at (length, 0, 0)
end

unit l2 box
  size length mm [20, 20]
  size w mm [4, 4]
  size h mm [4, 4]
  port end at (length, 0, 0)
end

unit l3 box
  size length mm [20, 20]
  size w mm [4, 4]
  size h mm [4, 4]
  port end at (length, 0, 0)
end

unit l4 box
  size length mm [20, 20]
  size w mm [4, 4]
  size h mm [4, 4]
  port end at (length, 0, 0)
end

rule r1 adds l1 on root.end
  param length mm [20, 20]
end

rule r2 adds l2 on l1.end
end

rule r3 adds l3 on l2.end
  param length mm [20, 20]
end

rule r4 adds l4 on l3.end
end

constraint full count-range l4 [1, 1]
"#;

pub fn chain() -> Grammar {
    parse_grammar(CHAIN).unwrap()
}

/// The one complete chain design.
pub fn chain_design(g: &Grammar) -> DesignSequence {
    let mut s = DesignSequence::empty("chain");
    while let Some(l) = shapeflow_core::grammar::legal_rules(g, &s).unwrap().first().cloned() {
        let rule = g.rule(&l.rule_id).unwrap();
        let params = rule.params.iter().map(|p| p.min).collect();
        s.applications
            .push(shapeflow_core::grammar::RuleApplication::new(&l.rule_id, l.hosts[0], params));
    }
    s
}

pub fn head(s: &DesignSequence, m: usize) -> DesignSequence {
    DesignSequence {
        shape_type: s.shape_type.clone(),
        applications: s.applications[..m].to_vec(),
        author_tags: Vec::new(),
    }
}

/// Unmasked greedy decoding until EOS.
pub fn greedy(model: &CompleterModel, mut tokens: Vec<usize>, limit: usize) -> Vec<usize> {
    while tokens.len() < limit {
        let logits = model.logits(&tokens).unwrap();
        let row = logits.row(tokens.len() - 1);
        let best = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
        tokens.push(best);
        if best == EOS {
            break;
        }
    }
    tokens
}

pub fn random_host_config() -> WalkConfig {
    WalkConfig {
        host_policy: HostPolicy::Random,
        noise: 0.3,
        ..drone_walk_config()
    }
}

