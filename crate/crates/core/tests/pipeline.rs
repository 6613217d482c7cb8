use satint_core::closed_loop::{simulate_closed_loop, tracking_metrics};
use satint_core::gain_synthesis::{synthesize, DEFAULT_LIPSCHITZ_SAMPLES};
use satint_core::io;
use satint_core::stability_cert::certify_assumption1;
use satint_core::{build_map, builtin, ClosedLoopConfig, CertifyOptions, PlantConfig, SaturatorSpec};

#[test]
fn scalar_cubic_end_to_end() {
    let plant = builtin("scalar_cubic").unwrap();
    let spec = SaturatorSpec::new(-1.0, 1.0).unwrap();
    let map = build_map(&plant, &spec, 201).unwrap();
    // G(u) solves x³ + x = u; at u = 1 that root is 0.6823...
    assert!((map.y_max - 0.682_327_803_8).abs() < 1e-6);

    let cert = certify_assumption1(&plant, &map, &CertifyOptions::default()).unwrap();
    assert!(cert.m >= 1.0 && cert.lambda > 0.0 && cert.eps0 > 0.0);
    let (_, gain) = synthesize(&plant, &map, &cert, DEFAULT_LIPSCHITZ_SAMPLES, 0).unwrap();
    assert!(gain.k_max > 0.0 && gain.kappa == gain.kappa_branches[0].min(gain.kappa_branches[1]));

    let mut cfg = ClosedLoopConfig::new(plant, spec, 0.5, 0.3, vec![-1.0], -1.0, 80.0);
    cfg.record_every = 100;
    let recs = simulate_closed_loop(&cfg, &map).unwrap();
    let m = tracking_metrics(&recs, 1e-3).unwrap();
    assert!(m.settle_time < 80.0 && m.final_error < 1e-3);

    let mut buf = Vec::new();
    io::write_trajectory_csv(&mut buf, &recs).unwrap();
    let back = io::read_trajectory_csv(buf.as_slice()).unwrap();
    assert_eq!(back.len(), recs.len());
    for (a, b) in recs.iter().zip(&back) {
        assert!((a.u - b.u).abs() <= 1e-11 * a.u.abs().max(1.0));
        assert!((a.x[0] - b.x[0]).abs() <= 1e-11 * a.x[0].abs().max(1.0));
    }
}

#[test]
fn custom_plant_config_matches_builtin() {
    let text = builtin_json("linear1d");
    let cfg = PlantConfig::from_json_str(&text).unwrap();
    let plant = cfg.to_plant().unwrap();
    let reference = builtin("linear1d").unwrap();
    for &(x, u) in &[(0.3, -0.2), (-1.5, 0.9), (2.0, 0.0)] {
        assert_eq!(plant.f(&[x], u), reference.f(&[x], u));
        assert_eq!(plant.g(&[x]), reference.g(&[x]));
    }
    let broken = text.replace("\"n\": 1", "\"n\": 2");
    assert!(PlantConfig::from_json_str(&broken).is_err());
}

fn builtin_json(name: &str) -> String {
    satint_core::plant::builtin_config(name).unwrap().to_json_string().unwrap()
}
