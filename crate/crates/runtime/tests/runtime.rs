use cellfree_runtime::record::{series_header, RunRecord};
use cellfree_runtime::{export_metrics, greedy_activation, run_scenario, Mode, RuntimeError, Scenario, Simulation};
use cellfree_core::agents::translate_intent;

const SMALL: &str = r#"
name = "small"
seed = 4
loops = 8

[network]
num_orus = 6
num_users = 3

[[schedule]]
at_loop = 1
intent = "Guarantee 20 Mbps for user 2."

[[schedule]]
at_loop = 5
intent = "Maximize the sum of log-rates. No minimum rate requirements."
"#;

fn small() -> Scenario {
    Scenario::from_toml_str(SMALL).unwrap()
}

fn scenario_err(toml: &str) -> (String, String) {
    match Scenario::from_toml_str(toml) {
        Err(RuntimeError::Scenario { field, reason }) => (field, reason),
        other => panic!("expected a scenario error, got {other:?}"),
    }
}

#[test]
fn scenario_round_trips_and_hashes_stably() {
    let a = small();
    let b = Scenario::from_toml_str(&toml::to_string(&a).unwrap()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 64);
    let mut c = a.clone();
    c.seed += 1;
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn scenario_rejects_bad_schedules() {
    let late = SMALL.replace("at_loop = 5", "at_loop = 9");
    let (f, r) = scenario_err(&late);
    assert_eq!(f, "schedule[1].at_loop");
    assert!(r.contains("beyond"), "{r}");

    let unordered = SMALL.replace("at_loop = 5", "at_loop = 1");
    assert_eq!(scenario_err(&unordered).0, "schedule[1].at_loop");

    let gibberish = SMALL.replace("Guarantee 20 Mbps for user 2.", "Make it faster somehow.");
    assert_eq!(scenario_err(&gibberish).0, "schedule[0].intent");

    let no_user = SMALL.replace("user 2.", "user 9.");
    assert_eq!(scenario_err(&no_user).0, "schedule[0].intent");
}

#[test]
fn scenario_rejects_bad_network() {
    let (f, _) = scenario_err(&SMALL.replace("num_users = 3", "num_users = 3\nuser_positions = [[1.0, 2.0]]"));
    assert_eq!(f, "network.user_positions");
    let (f, _) = scenario_err(&SMALL.replace("loops = 8", "loops = 0"));
    assert_eq!(f, "loops");
    assert!(matches!(
        Scenario::from_toml_str(&SMALL.replace("num_users = 3", "num_users = 3\nbogus = 1")),
        Err(RuntimeError::Toml(_))
    ));
}

#[test]
fn energy_saving_without_policy_is_refused() {
    let es = SMALL.replace("Guarantee 20 Mbps", "Enter the energy-saving mode. Guarantee 20 Mbps");
    let sc = Scenario::from_toml_str(&es).unwrap();
    assert!(sc.needs_policy().unwrap());
    assert_eq!(sc.training_r_min().unwrap(), vec![0.0, 20.0, 0.0]);
    let err = Simulation::new(&sc, Mode::Proposed, None).err().unwrap();
    assert!(matches!(err, RuntimeError::Core(cellfree_core::Error::MissingCheckpoint(_))));
    // baselines never need one
    assert!(Simulation::new(&sc, Mode::Greedy, None).is_ok());
}

#[test]
fn full_power_keeps_every_oru_on() {
    let rec = run_scenario(&small(), Mode::FullPower, None).unwrap();
    assert_eq!(rec.len(), 8);
    for s in rec.snapshots() {
        assert_eq!(s.active_fraction, 1.0);
        assert!(s.lambda.iter().all(|&l| l == 0.0));
    }
    assert_eq!(rec.summary(0.1).mean_active_fraction, 1.0);
}

#[test]
fn schedule_lands_on_its_loop() {
    let rec = run_scenario(&small(), Mode::Proposed, None).unwrap();
    let kinds: Vec<&str> = rec.snapshots().iter().map(|s| s.intent_kind.as_str()).collect();
    assert_eq!(kinds[..4], ["sum_rate"; 4]);
    assert_eq!(kinds[4..], ["sum_log_rate"; 4]);
    assert_eq!(rec.snapshots()[3].r_min_mbps, vec![0.0, 20.0, 0.0]);
    assert_eq!(rec.snapshots()[4].r_min_mbps, vec![0.0; 3]);
    let idx: Vec<u64> = rec.snapshots().iter().map(|s| s.loop_index).collect();
    assert_eq!(idx, (1..=8).collect::<Vec<_>>());
}

#[test]
fn greedy_picks_the_strongest_oru_for_a_lone_user() {
    for seed in 0..5 {
        let toml = format!(
            "name = \"lone\"\nseed = {seed}\nloops = 2\n[network]\nnum_orus = 6\nnum_users = 1\n\
             [[schedule]]\nat_loop = 1\nintent = \"Enter the energy-saving mode. Guarantee 1 Mbps for user 1.\"\n"
        );
        let sc = Scenario::from_toml_str(&toml).unwrap();
        let world = sc.build_world(None).unwrap();
        let spec = translate_intent(&sc.schedule[0].intent, 1).unwrap();
        let utility = spec.utility_spec(world.p_max_w, sc.agents.dual_step).unwrap();
        let out = greedy_activation(&world, &utility, 0.1).unwrap();
        let strongest = (0..6)
            .max_by(|&a, &b| world.fading.get(0, a).partial_cmp(&world.fading.get(0, b)).unwrap())
            .unwrap();
        let mut want = vec![false; 6];
        want[strongest] = true;
        assert_eq!(out.active, want, "seed {seed}");
        assert!(out.feasible);
        assert_eq!(out.rounds, 1);

        let rec = run_scenario(&sc, Mode::Greedy, None).unwrap();
        assert_eq!(rec.snapshots()[1].active, want);
    }
}

#[test]
fn empty_record_exports_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let rec = RunRecord::new("empty", "00", Mode::Greedy, 2, 3);
    let files = export_metrics(&rec, 0.1, dir.path()).unwrap();
    assert_eq!(files.series.file_name().unwrap(), "greedy_series.csv");
    let series = std::fs::read_to_string(&files.series).unwrap();
    assert_eq!(series, format!("{}\n", series_header(2, 3).join(",")));
    let summary = std::fs::read_to_string(&files.summary).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert!(summary.starts_with("scenario,mode,loops,"));
}

#[test]
fn series_has_one_row_per_loop() {
    let dir = tempfile::tempdir().unwrap();
    let rec = run_scenario(&small(), Mode::Greedy, None).unwrap();
    let files = export_metrics(&rec, 0.1, dir.path()).unwrap();
    let mut rd = csv::Reader::from_path(&files.series).unwrap();
    let header = rd.headers().unwrap().clone();
    assert_eq!(header.len(), 6 + 6 * 3 + 6);
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), rec.len());
    for (row, s) in rows.iter().zip(rec.snapshots()) {
        assert_eq!(row[0].parse::<u64>().unwrap(), s.loop_index);
        let r2: f64 = row[header.iter().position(|h| h == "rate_mbps_2").unwrap()].parse().unwrap();
        assert_eq!(r2, s.rates_mbps[1]);
    }
}

#[test]
fn identical_seeds_give_identical_files() {
    let sc = small();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut records = Vec::new();
    for d in &dirs {
        let mut rec = run_scenario(&sc, Mode::Proposed, None).unwrap();
        let files = export_metrics(&rec, 0.1, d.path()).unwrap();
        assert!(files.series.exists());
        rec.timing = Default::default();
        records.push(rec);
    }
    assert_eq!(records[0], records[1]);
    for name in ["proposed_series.csv", "proposed_summary.csv"] {
        assert_eq!(
            std::fs::read(dirs[0].path().join(name)).unwrap(),
            std::fs::read(dirs[1].path().join(name)).unwrap()
        );
    }
}

#[test]
fn record_is_append_only() {
    let rec = run_scenario(&small(), Mode::FullPower, None).unwrap();
    let mut copy = RunRecord::new("small", "00", Mode::FullPower, 3, 6);
    let first = rec.snapshots()[0].clone();
    copy.push(rec.snapshots()[1].clone(), 1.0).unwrap();
    assert!(matches!(copy.push(first, 1.0), Err(RuntimeError::Record(_))));
    let mut wrong = rec.snapshots()[2].clone();
    wrong.active.pop();
    assert!(copy.push(wrong, 1.0).is_err());
    assert_eq!(copy.len(), 1);
}

#[test]
fn record_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let rec = run_scenario(&small(), Mode::DrlGa, None).unwrap();
    let path = dir.path().join("run.json");
    rec.save_json(&path).unwrap();
    assert_eq!(RunRecord::load_json(&path).unwrap(), rec);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    assert_eq!(v["schema"], "cellfree.run.v1");
    assert_eq!(v["mode"], "drl_ga");
    assert_eq!(v["scenario_hash"], small().hash());
}
