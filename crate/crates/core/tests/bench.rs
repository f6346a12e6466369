use drama::bench::{self, csv_preamble, loglog_slope, measure, BenchConfig, BenchMode, CSV_HEADER, HEADLINE_POINT};
use drama::rng::Seed;
use drama::ssd::{flop_proxy, CostModel};

#[test]
fn proxy_ratio_at_the_headline_point_is_twenty() {
    let (t, d) = (HEADLINE_POINT.0 as u64, HEADLINE_POINT.1 as u64);
    assert_eq!(flop_proxy(CostModel::Attention, t, d), 20 * flop_proxy(CostModel::Ssd, t, d));
}

#[test]
fn rows_carry_exact_proxies_and_ratios() {
    let cfg = BenchConfig {
        t_list: vec![16, 48, 80],
        d_list: vec![4, 8],
        extra_points: vec![(31, 128)],
        reps: 1,
        ..BenchConfig::default()
    };
    let rows = bench::run(&cfg).unwrap();
    assert_eq!(rows.len(), 2 * 7);
    for r in &rows {
        let (t, d) = (r.len as u64, r.dim as u64);
        assert_eq!(r.ratio, r.len as f64 / r.dim as f64);
        assert_eq!(r.flop_proxy, flop_proxy(r.mode.cost_model(), t, d));
        assert!(r.wall_ns > 0);
        if r.mode == BenchMode::Attention {
            assert_eq!(r.measured_multiplies, 2 * t * t * d, "QKᵀ plus PV");
        }
    }
}

#[test]
fn chunked_multiplies_grow_linearly_in_length() {
    let count = |t| measure(BenchMode::SsdChunked, t, 8, 16, 1, Seed(0)).measured_multiplies as f64;
    let (a, b, c) = (count(256), count(512), count(1024));
    assert!((b / a - 2.0).abs() < 0.05 && (c / b - 2.0).abs() < 0.05, "{a} {b} {c}");
    let row = measure(BenchMode::SsdChunked, 320, 16, 16, 1, Seed(0));
    assert!(row.count_ratio() > 2.0 && row.count_ratio() < 4.0, "{}", row.count_ratio());
}

#[test]
fn multiply_counts_are_deterministic() {
    for mode in [BenchMode::Attention, BenchMode::SsdChunked] {
        let a = measure(mode, 100, 8, 16, 1, Seed(1));
        let b = measure(mode, 100, 8, 16, 1, Seed(2));
        assert_eq!(a.measured_multiplies, b.measured_multiplies);
    }
}

#[test]
fn csv_has_version_and_header() {
    let rows = bench::run(&BenchConfig {
        t_list: vec![8],
        d_list: vec![2],
        extra_points: vec![],
        reps: 1,
        ..BenchConfig::default()
    })
    .unwrap();
    let csv = bench::to_csv(&rows);
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# drama-bench version"));
    assert_eq!(lines.next().unwrap(), CSV_HEADER);
    let body: Vec<&str> = lines.collect();
    assert_eq!(body.len(), 2);
    assert!(body[0].starts_with("attention,8,2,128,256,") && body[0].ends_with(",4"));
    assert!(csv.starts_with(&csv_preamble()));
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(bench::run(&BenchConfig { chunk: 0, ..BenchConfig::default() }).is_err());
    assert!(bench::run(&BenchConfig { t_list: vec![0], ..BenchConfig::default() }).is_err());
    assert!(bench::run(&BenchConfig { d_list: vec![], ..BenchConfig::default() }).is_err());
    assert!(serde_json::from_str::<BenchConfig>(r#"{"t_lst": [4]}"#).is_err());
}

#[test]
fn slope_fit_recovers_exponents() {
    let quad: Vec<(f64, f64)> = [128.0, 256.0, 512.0, 1024.0].iter().map(|&t: &f64| (t, 5.0 * t * t)).collect();
    assert!((loglog_slope(&quad).unwrap() - 2.0).abs() < 1e-12);
    assert!(loglog_slope(&[(1.0, 1.0), (1.0, 2.0)]).is_none());
    assert!(loglog_slope(&[(1.0, 0.0), (2.0, 2.0)]).is_none());
}
