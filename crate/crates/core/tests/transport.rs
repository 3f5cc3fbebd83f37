use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rbfdd::nodeset::Domain;
use rbfdd::partition::{localize, LocalPlan};
use rbfdd::rbffd::ApproxConfig;
use rbfdd::solver::{run, Discretization, RunOptions};
use rbfdd::transport::{inproc, tcp, Endpoint, NetModel, SyncBarrier, TransportError};

const WAIT: Duration = Duration::from_secs(10);

fn local_plans(d: &Discretization<f64>, grid: &[usize]) -> Vec<LocalPlan<f64>> {
    let owners = rbfdd::partition::assign_owners(&d.nodes, grid).unwrap();
    let plan = rbfdd::partition::build_exchange_maps(&d.nodes, &d.stencils, &owners, grid).unwrap();
    (0..plan.len())
        .map(|s| localize(&plan, s, &d.nodes, &d.stencils).unwrap())
        .collect()
}

fn wire(plans: &[LocalPlan<f64>], over_tcp: bool, net: NetModel) -> Vec<Endpoint> {
    let lists: Vec<_> = plans
        .iter()
        .map(|p| (p.id, &p.sends[..], &p.recvs[..]))
        .collect();
    if over_tcp {
        tcp::loopback_endpoints(&lists, net, WAIT).unwrap()
    } else {
        inproc::endpoints(&lists, net, WAIT).unwrap()
    }
}

/// Runs one exchange on every endpoint concurrently.
fn exchange_all(eps: Vec<Endpoint>, fields: Vec<Vec<f64>>, step: u64) -> Vec<Vec<f64>> {
    std::thread::scope(|s| {
        let hs: Vec<_> = eps
            .into_iter()
            .zip(fields)
            .map(|(mut ep, mut f)| {
                s.spawn(move || {
                    ep.exchange(step, &mut f).unwrap();
                    f
                })
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

#[test]
fn halo_slots_receive_owner_values_bitwise() {
    let cfg = ApproxConfig::new(2, 2).unwrap();
    let d = Discretization::generate(Domain::mixed(2).unwrap(), 0.02, 3, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let global: Vec<f64> = (0..d.nodes.len())
        .map(|_| rng.random::<f64>() * 1e3 - 500.0)
        .collect();
    for grid in [[2, 1], [2, 2], [4, 4]] {
        let plans = local_plans(&d, &grid);
        for over_tcp in [false, true] {
            for values in [
                (0..d.nodes.len()).map(|i| i as f64).collect::<Vec<_>>(),
                global.clone(),
            ] {
                let fields: Vec<Vec<f64>> = plans
                    .iter()
                    .map(|p| {
                        let mut f = vec![f64::NAN; p.map.len()];
                        for l in 0..p.map.n_owned() {
                            f[l] = values[p.map.to_global(l)];
                        }
                        f
                    })
                    .collect();
                let out = exchange_all(wire(&plans, over_tcp, NetModel::disabled()), fields, 0);
                for (p, f) in plans.iter().zip(&out) {
                    for l in 0..p.map.len() {
                        assert_eq!(
                            f[l].to_bits(),
                            values[p.map.to_global(l)].to_bits(),
                            "grid {grid:?}"
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn single_subdomain_exchange_is_a_no_op() {
    let mut ep = Endpoint::new(0, NetModel::disabled(), WAIT);
    let mut f = vec![1.0, 2.0];
    let stats = ep.exchange(0, &mut f).unwrap();
    assert_eq!(f, vec![1.0, 2.0]);
    assert_eq!(stats.bytes_sent, 0);
    assert!(stats.elapsed < 1e-3);
}

fn pair(net: NetModel, len: usize) -> (Endpoint, Endpoint) {
    let mut a = Endpoint::new(0, net, WAIT);
    let mut b = Endpoint::new(1, net, WAIT);
    let (tx, rx) = inproc::link(0, 1);
    a.add_send(1, (0..len).collect(), Box::new(tx));
    b.add_recv(0, (0..len).collect(), Box::new(rx));
    let (tx, rx) = inproc::link(1, 0);
    b.add_send(0, (0..len).collect(), Box::new(tx));
    a.add_recv(1, (0..len).collect(), Box::new(rx));
    (a, b)
}

#[test]
fn latency_only_message_costs_latency() {
    let net = NetModel::simulated(0.21e-3, 1e9).unwrap();
    let (mut a, mut b) = pair(net, 0);
    let h = std::thread::spawn(move || b.exchange(0, &mut Vec::<f64>::new()).unwrap());
    let sa = a.exchange(0, &mut Vec::<f64>::new()).unwrap();
    let sb = h.join().unwrap();
    for s in [sa, sb] {
        assert!((s.elapsed - 0.21e-3).abs() < 1e-12);
        assert!(s.wall >= 0.21e-3);
    }
}

#[test]
fn simulated_cost_tracks_the_link_model() {
    let (lambda, bw) = (1e-4, 1e9);
    let net = NetModel::simulated(lambda, bw).unwrap();
    for values in [16usize, 160, 1600, 16_000] {
        let (mut a, mut b) = pair(net, values);
        let mut fa = vec![1.0f64; values];
        let mut fb = vec![2.0f64; values];
        let h = std::thread::spawn(move || {
            b.exchange(3, &mut fb).unwrap();
            fb
        });
        let s = a.exchange(3, &mut fa).unwrap();
        assert_eq!(h.join().unwrap()[0], 1.0);
        let want = lambda + (values * 8) as f64 / bw;
        assert!(
            (s.elapsed - want).abs() <= 0.1 * want,
            "{} vs {want}",
            s.elapsed
        );
        assert!(s.wall >= want);
        assert_eq!(s.bytes_sent, values * 8);
    }
}

#[test]
fn disconnect_and_timeout_name_the_pair() {
    let (mut a, b) = pair(NetModel::disabled(), 2);
    drop(b);
    let err = a.exchange(0, &mut [0.0f64; 2]).unwrap_err();
    assert!(
        matches!(err, TransportError::Disconnected { .. }),
        "{err:?}"
    );

    let mut a = Endpoint::new(0, NetModel::disabled(), Duration::from_millis(50));
    let (_tx, rx) = inproc::link(1, 0);
    a.add_recv(1, vec![0], Box::new(rx));
    let started = Instant::now();
    assert_eq!(
        a.exchange(0, &mut [0.0f64]).unwrap_err(),
        TransportError::Timeout { from: 1, to: 0 }
    );
    assert!(started.elapsed() < Duration::from_secs(2));
}

#[test]
fn mismatched_step_is_a_contract_violation() {
    let (mut a, mut b) = pair(NetModel::disabled(), 1);
    let h = std::thread::spawn(move || b.exchange(7, &mut [0.0f64]));
    let err = a.exchange(8, &mut [0.0f64]).unwrap_err();
    assert!(
        matches!(err, TransportError::Contract { from: 1, to: 0, .. }),
        "{err:?}"
    );
    let _ = h.join();
}

#[test]
fn staggered_barrier_releases_everyone_after_the_last_arrival() {
    let workers = 16;
    let barrier = Arc::new(SyncBarrier::new(workers, WAIT));
    let origin = Instant::now();
    let handles: Vec<_> = (0..workers)
        .map(|w| {
            let b = Arc::clone(&barrier);
            std::thread::spawn(move || {
                let mut out = Vec::new();
                for round in 0..3u64 {
                    std::thread::sleep(Duration::from_millis(
                        ((w as u64 * 7 + round * 3) % 16) * 2,
                    ));
                    let arrived = origin.elapsed();
                    b.wait(w).unwrap();
                    out.push((arrived, origin.elapsed()));
                }
                out
            })
        })
        .collect();
    let all: Vec<Vec<(Duration, Duration)>> =
        handles.into_iter().map(|h| h.join().unwrap()).collect();
    for round in 0..3 {
        let latest = all.iter().map(|v| v[round].0).max().unwrap();
        for v in &all {
            assert!(v[round].1 >= latest, "round {round}");
        }
        if round > 0 {
            let previous_release = all.iter().map(|v| v[round - 1].1).min().unwrap();
            assert!(all.iter().all(|v| v[round].1 >= previous_release));
        }
    }
}

#[test]
fn reported_times_fit_in_the_wall_clock() {
    let cfg = ApproxConfig::new(2, 2).unwrap();
    let d = Discretization::generate(Domain::unit(2).unwrap(), 0.03, 1, &cfg).unwrap();
    let mut o = RunOptions::new(2);
    o.grid = vec![2, 2];
    o.max_steps = 300;
    o.residual_tol = None;
    let started = Instant::now();
    let out = run(&d, &o).unwrap();
    let wall = started.elapsed().as_secs_f64();
    for w in &out.workers {
        let busy: f64 = w.timings.iter().map(|t| t.t_compute + t.t_comm).sum();
        assert!(busy <= wall * 1.05, "worker {}: {busy} > {wall}", w.id);
        assert!(w
            .timings
            .iter()
            .all(|t| t.t_compute >= 0.0 && t.t_comm >= 0.0));
    }
}
