//! Acceptance checks, one line per criterion. Runs without the libtest harness
//! so the summary is always printed.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::*;
use pico_core::cost::{
    piece_redundancy, receptive_extent, required_input_region, Cluster, DeviceSpec, Region,
};
use pico_core::graph::{LayerKind, LayerSpec, Shape};
use pico_core::io::parse_cluster;
use pico_core::oracle::{oracle_heterogeneous, oracle_homogeneous};
use pico_core::partition::{partition, PieceChain};
use pico_core::planner::{plan, plan_homogeneous, PipelinePlan};
use pico_core::simulator::{estimate_memory, simulate, SimConfig};
use pico_core::vertex_set::VertexSet;
use pico_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn homogeneous_instances() -> Vec<(PieceChain, Cluster)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..200)
        .map(|_| {
            let chain = random_chain(&mut rng, 8);
            let d = rng.gen_range(1..=6);
            let flops = [0.8e9, 1.2e9, 2.2e9][rng.gen_range(0..3)];
            let bw = [1e6, 6.25e6, 1.25e8][rng.gen_range(0..3)];
            (chain, uniform_cluster(d, flops, bw))
        })
        .collect()
}

fn dp_exactness(instances: &[(PieceChain, Cluster)], plans: &mut Vec<PipelinePlan>) -> Outcome {
    let clock = Instant::now();
    for (k, (chain, c)) in instances.iter().enumerate() {
        let p =
            plan_homogeneous(chain, c, f64::INFINITY).map_err(|e| format!("instance {k}: {e}"))?;
        let o = oracle_homogeneous(chain, c, f64::INFINITY)
            .map_err(|e| format!("instance {k}: {e}"))?;
        if p.period_s != o.best_plan.period_s {
            return Err(format!(
                "instance {k}: planner period {} vs oracle {}",
                p.period_s, o.best_plan.period_s
            ));
        }
        plans.push(p);
    }
    let secs = clock.elapsed().as_secs_f64();
    if secs >= 60.0 {
        return Err(format!("took {secs:.1} s"));
    }
    Ok(format!(
        "{} instances, periods identical, {secs:.2} s",
        instances.len()
    ))
}

fn chain_degeneration() -> Outcome {
    let mut notes = Vec::new();
    for name in ["vgg16.json", "yolov2.json"] {
        let g = load_model(name);
        let r = partition(&g, 5).map_err(|e| e.to_string())?;
        let expected = g.windowed_count();
        if r.pieces.len() != expected {
            return Err(format!(
                "{name}: {} pieces for {expected} conv/pool layers",
                r.pieces.len()
            ));
        }
        for p in &r.pieces {
            let windowed = p
                .vertices
                .iter()
                .filter(|&v| g.layer(v).kind.is_windowed())
                .count();
            if windowed != 1 {
                return Err(format!(
                    "{name}: piece {} holds {windowed} conv/pool layers",
                    p.index
                ));
            }
        }
        notes.push(format!("{name} {} pieces", r.pieces.len()));
    }
    Ok(format!(
        "{}; the original VGG16 count is 19, this fixture has 18 conv/pool layers",
        notes.join(", ")
    ))
}

fn unbalanced_split() -> Outcome {
    let g = load_model("unbalanced.json");
    let r = partition(&g, 5).map_err(|e| e.to_string())?;
    if r.pieces.len() != 2 {
        return Err(format!("{} pieces", r.pieces.len()));
    }
    let mut costs = Vec::new();
    for p in &r.pieces {
        let (rows, cols) = receptive_extent(&p.vertices, &g);
        if (rows > 1) == (cols > 1) {
            return Err(format!("piece {} extent {rows}x{cols}", p.index));
        }
        costs.push(p.redundancy_flops);
    }
    let fused: VertexSet = (0..g.len())
        .filter(|&v| g.layer(v).kind.is_windowed())
        .collect();
    let c_fused = piece_redundancy(&fused, &g).map_err(|e| e.to_string())?;
    if !costs.iter().all(|&c| c_fused > c) {
        return Err(format!("fused C {c_fused} vs pieces {costs:?}"));
    }
    Ok(format!("2 pieces, C = {costs:?}, fused C = {c_fused}"))
}

fn inception_halo() -> Outcome {
    let g = load_model("inception_c.json");
    let fused: VertexSet = (0..g.len())
        .filter(|&v| !matches!(g.layer(v).kind, LayerKind::Input | LayerKind::Output))
        .collect();
    let whole = receptive_extent(&fused, &g);
    let brute = brute_receptive(&fused, &g);
    if whole != brute {
        return Err(format!("fused extent {whole:?}, brute force {brute:?}"));
    }
    if whole != (13, 13) {
        return Err(format!("fused extent {whole:?}, expected 13x13"));
    }
    let r = partition(&g, 5).map_err(|e| e.to_string())?;
    let first = &r.pieces[0].vertices;
    let got = receptive_extent(first, &g);
    let brute_first = brute_receptive(first, &g);
    if got != brute_first || got.0 != 7 {
        return Err(format!(
            "first piece extent {got:?}, brute force {brute_first:?}"
        ));
    }
    Ok(format!(
        "fused {}x{}, first of {} pieces {}x{}",
        whole.0,
        whole.1,
        r.pieces.len(),
        got.0,
        got.1
    ))
}

fn receptive_field_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 1000 {
        let (k, s, p) = (
            rng.gen_range(1..=7),
            rng.gen_range(1..=7),
            rng.gen_range(0..=7),
        );
        let (h, w) = (rng.gen_range(1..=64), rng.gen_range(1..=64));
        if h + 2 * p < k || w + 2 * p < k {
            continue;
        }
        let out_h = (h + 2 * p - k) / s + 1;
        let a = rng.gen_range(0..out_h);
        let b = rng.gen_range(a + 1..=out_h);
        let layer = LayerSpec::conv(1, (k, k), (s, s), (p, p), 3, 4);
        let shape = Shape {
            channels: 3,
            height: h,
            width: w,
        };
        let out = Region::new(4, a, b - a, (w + 2 * p - k) / s + 1);
        let got = required_input_region(&layer, &out, shape).map_err(|e| e.to_string())?;
        let touched: Vec<usize> = (a..b)
            .flat_map(|o| (0..k).map(move |t| (o * s + t) as i64 - p as i64))
            .filter(|&r| r >= 0 && r < h as i64)
            .map(|r| r as usize)
            .collect();
        let ok = match (touched.iter().min(), touched.iter().max()) {
            (Some(&lo), Some(&hi)) => got.row_start == lo && got.rows == hi - lo + 1,
            _ => got.rows == 0,
        };
        if !ok {
            return Err(format!(
                "k={k} s={s} p={p} h={h} rows {a}..{b}: got {got:?}"
            ));
        }
        checked += 1;
    }
    Ok(format!("{checked} random layers match"))
}

fn simulator_agreement(instances: &[(PieceChain, Cluster)], plans: &[PipelinePlan]) -> Outcome {
    if plans.len() != instances.len() {
        return Err("no plans from criterion 1".into());
    }
    let cfg = SimConfig {
        frames: 40,
        ..SimConfig::default()
    };
    let mut worst: f64 = 0.0;
    for (k, ((chain, c), p)) in instances.iter().zip(plans).enumerate() {
        let r = simulate(p, chain, c, &cfg).map_err(|e| format!("instance {k}: {e}"))?;
        let dp = (r.measured_period_s - r.predicted_period_s).abs() / r.predicted_period_s;
        let dl = (r.measured_latency_s - r.predicted_latency_s).abs() / r.predicted_latency_s;
        worst = worst.max(dp).max(dl);
        if dp > 1e-9 || dl > 1e-9 {
            return Err(format!(
                "instance {k}: period error {dp:e}, latency error {dl:e}"
            ));
        }
    }
    Ok(format!(
        "{} plans, worst relative error {worst:e}",
        plans.len()
    ))
}

fn latency_cap(instances: &[(PieceChain, Cluster)]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut feasible, mut infeasible) = (0, 0);
    for (k, (chain, c)) in instances.iter().enumerate() {
        let free = plan_homogeneous(chain, c, f64::INFINITY).map_err(|e| e.to_string())?;
        let t_lim = free.latency_s * rng.gen_range(0.3..1.5);
        let p = plan_homogeneous(chain, c, t_lim);
        let o = oracle_homogeneous(chain, c, t_lim);
        match (p, o) {
            (Ok(p), Ok(o)) => {
                if p.latency_s > t_lim {
                    return Err(format!(
                        "instance {k}: latency {} over cap {t_lim}",
                        p.latency_s
                    ));
                }
                if p.period_s != o.best_plan.period_s {
                    return Err(format!(
                        "instance {k}: capped period {} vs oracle {}",
                        p.period_s, o.best_plan.period_s
                    ));
                }
                feasible += 1;
            }
            (Err(Error::Infeasible { .. }), Err(Error::Infeasible { .. })) => infeasible += 1,
            (p, o) => {
                return Err(format!(
                    "instance {k}: planner {:?} but oracle {:?}",
                    p.map(|p| p.period_s).map_err(|e| e.to_string()),
                    o.map(|o| o.best_plan.period_s).map_err(|e| e.to_string())
                ))
            }
        }
    }
    Ok(format!(
        "{feasible} feasible within cap, {infeasible} infeasible for both"
    ))
}

fn heterogeneous_gap() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let caps = [0.6e9, 0.8e9, 1.2e9, 1.5e9, 2.2e9];
    let mut gaps = Vec::new();
    while gaps.len() < 100 {
        let chain = random_chain(&mut rng, 6);
        let d = rng.gen_range(2..=5);
        let devices = (0..d)
            .map(|i| DeviceSpec::new(format!("d{i}"), caps[rng.gen_range(0..caps.len())]))
            .collect();
        let c = Cluster::new(devices, [6.25e6, 1.25e8][rng.gen_range(0..2)]).unwrap();
        let p = plan(&chain, &c, "", f64::INFINITY).map_err(|e| e.to_string())?;
        let mut o = oracle_heterogeneous(&chain, &c, f64::INFINITY).map_err(|e| e.to_string())?;
        let gap = o.compare(&p);
        if gap < 1.0 {
            return Err(format!(
                "instance {}: plan beats oracle, gap {gap}",
                gaps.len()
            ));
        }
        gaps.push(gap);
    }
    gaps.sort_by(f64::total_cmp);
    let median = (gaps[49] + gaps[50]) / 2.0;
    let q90 = gaps[89];
    let summary = format!(
        "gap min {:.3}, median {median:.3}, p90 {q90:.3}, max {:.3}",
        gaps[0],
        gaps[gaps.len() - 1]
    );
    if median > 1.25 {
        return Err(summary);
    }
    Ok(summary)
}

fn memory_monotonicity() -> Outcome {
    let g = load_model("vgg16.json");
    let r = partition(&g, 5).map_err(|e| e.to_string())?;
    let chain = PieceChain::from_partition(g, 5, r).map_err(|e| e.to_string())?;
    let mut peaks = Vec::new();
    for n in [1, 2, 4, 8] {
        let c = uniform_cluster(n, 1.2e9, 6.25e6);
        let p = plan_homogeneous(&chain, &c, f64::INFINITY).map_err(|e| e.to_string())?;
        let mut peak = 0;
        for s in &p.stages {
            for (_, m) in estimate_memory(s, &chain).map_err(|e| e.to_string())? {
                peak = peak.max(m.total());
            }
        }
        peaks.push(peak);
    }
    let line = format!("peak bytes per device on 1/2/4/8: {peaks:?}");
    if peaks.windows(2).all(|w| w[1] <= w[0]) {
        Ok(line)
    } else {
        Err(line)
    }
}

fn optimization_speed() -> Outcome {
    let mut notes = Vec::new();
    let clusters = ["cluster_uniform4.json", "cluster_hetero.json"]
        .map(|f| parse_cluster(&std::fs::read(fixture(f)).unwrap()).unwrap());
    for name in [
        "vgg16.json",
        "yolov2.json",
        "resnet_block.json",
        "inception_c.json",
        "fig8.json",
        "unbalanced.json",
    ] {
        let g = load_model(name);
        let clock = Instant::now();
        let r = partition(&g, 5).map_err(|e| e.to_string())?;
        let t_part = clock.elapsed().as_secs_f64();
        if t_part >= 10.0 {
            return Err(format!("{name}: partition took {t_part:.2} s"));
        }
        let chain = PieceChain::from_partition(g, 5, r).map_err(|e| e.to_string())?;
        let mut t_plan: f64 = 0.0;
        for c in &clusters {
            let clock = Instant::now();
            plan(&chain, c, "", f64::INFINITY).map_err(|e| format!("{name}: {e}"))?;
            t_plan = t_plan.max(clock.elapsed().as_secs_f64());
        }
        if t_plan >= 1.0 {
            return Err(format!("{name}: planning took {t_plan:.2} s"));
        }
        notes.push(format!("{name} {t_part:.3}/{t_plan:.3} s"));
    }
    Ok(format!("partition/plan: {}", notes.join(", ")))
}

fn main() -> ExitCode {
    let instances = homogeneous_instances();
    let mut plans = Vec::new();
    let results: Vec<(&str, Outcome)> = vec![
        ("1 DP exactness", dp_exactness(&instances, &mut plans)),
        ("2 chain degeneration", chain_degeneration()),
        ("3 unbalanced-kernel split", unbalanced_split()),
        ("4 InceptionC halo", inception_halo()),
        ("5 receptive-field oracle", receptive_field_oracle()),
        (
            "6 zero-jitter simulator agreement",
            simulator_agreement(&instances, &plans),
        ),
        ("7 latency cap", latency_cap(&instances)),
        ("8 heterogeneous gap", heterogeneous_gap()),
        ("9 memory monotonicity", memory_monotonicity()),
        ("10 optimization speed", optimization_speed()),
    ];
    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(msg) => println!("criterion {name}: PASS ({msg})"),
            Err(msg) => {
                failed += 1;
                println!("criterion {name}: FAIL ({msg})");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
