use super::*;

pub(crate) fn tiny_config(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.apply_text(
        "motifs = 101
         n = 6
         masks = 1001111
         d_sizes = 40
         seeds = 7
         valid_size = 20
         test_size = 30
         t2 = distill,dpg_off
         am.hidden = 4
         am.max_gen_len = 10
         am.max_epochs = 3
         t1.samples_per_step = 500
         t1.max_iters = 5
         distill.samples = 50
         dpg.iterations = 2
         dpg.episodes_per_iter = 64
         eval.mtf_samples = 50
         eval.logz_samples = 200
         eval.collapse_samples = 20",
    )
    .unwrap();
    c.out_dir = out.to_path_buf();
    c
}

#[test]
fn defaults_cover_the_reference_grid() {
    let c = ExperimentConfig::default();
    assert_eq!(c.n, 30);
    assert_eq!(c.motifs, DEFAULT_MOTIFS);
    assert_eq!(c.d_sizes, vec![500, 1000, 5000, 10000, 20000]);
    assert_eq!(c.seeds, vec![1234, 4444]);
    assert_eq!(c.test_size, 5000);
    assert_eq!(c.masks.iter().map(|m| m.to_string()).collect::<Vec<_>>(), ["1001111", "Mv1001111"]);
    assert_eq!(c.points().len(), 3 * 5 * 2 * 2);
    c.validate().unwrap();
}

#[test]
fn text_config_sets_keys_and_rejects_unknown_ones() {
    let mut c = ExperimentConfig::default();
    c.apply_text("# comment\nmotifs = 1011\n\nseeds = 1, 2,3  # trailing\nt2 = dpg\npg.reward = log_potential\n")
        .unwrap();
    assert_eq!(c.motifs, ["1011"]);
    assert_eq!(c.seeds, [1, 2, 3]);
    assert_eq!(c.t2, [Training2Method::DpgOff]);
    assert_eq!(c.dpg.pg_reward, PgReward::LogPotential);

    assert!(c.apply_text("bogus = 1").unwrap_err().is_config());
    assert!(c.apply_text("n: 30").unwrap_err().is_config());
    assert!(c.set("d_sizes", "500,x").unwrap_err().is_config());
    assert!(c.set("masks", "10011").unwrap_err().is_config());
}

#[test]
fn text_form_roundtrips() {
    let mut c = ExperimentConfig::default();
    c.set("dpg.learning_rate", "0.0125").unwrap();
    c.set("potential", "wn_f").unwrap();
    let mut back = ExperimentConfig::default();
    back.apply_text(&c.to_text()).unwrap();
    assert_eq!(back, c);
}

#[test]
fn validation_rejects_bad_grids() {
    let bad = [("d_sizes", "0"), ("motifs", "1021"), ("motifs", "1111111111111111111111111111111"), ("jobs", "0")];
    for (k, v) in bad {
        let mut c = ExperimentConfig::default();
        let checked = c.set(k, v).and_then(|_| c.validate());
        assert!(checked.unwrap_err().is_config(), "{k} = {v}");
    }
    let mut c = ExperimentConfig::default();
    c.set("masks", "0000000").unwrap();
    assert!(c.validate().unwrap_err().is_config());
}

#[test]
fn every_result_setting_moves_the_point_hash() {
    let base = ExperimentConfig::default();
    let point = base.points()[0].clone();
    let h0 = point_hash(&base, &point);
    let mut seen = std::collections::HashSet::new();
    for (key, value) in base.result_entries() {
        if matches!(key, "motifs" | "masks" | "d_sizes" | "seeds") {
            continue;
        }
        let mut c = base.clone();
        let changed = match key {
            "t1" => "rs".to_string(),
            "t2" => "pg".to_string(),
            "potential" => "wn_f".to_string(),
            "pg.reward" => "log_potential".to_string(),
            "t1.reuse_samples" => "false".to_string(),
            _ => {
                let v: f64 = value.parse().unwrap();
                (v + 1.0).to_string()
            }
        };
        c.set(key, &changed).unwrap();
        let h = point_hash(&c, &point);
        assert_ne!(h, h0, "{key}");
        assert!(seen.insert(h));
    }
    let mut moved = base.clone();
    moved.out_dir = PathBuf::from("/elsewhere");
    moved.jobs = 8;
    assert_eq!(point_hash(&moved, &point), h0);
    assert_ne!(point_hash(&base, &base.points()[1]), h0);
}

#[test]
fn reference_model_key_ignores_the_mask() {
    let c = ExperimentConfig::default();
    let a = Point { motif: "101".into(), mask: "1001111".parse().unwrap(), d: 500, seed: 1 };
    let b = Point { mask: "Mv1001111".parse().unwrap(), ..a.clone() };
    assert_eq!(r_hash(&c, &a), r_hash(&c, &b));
    assert_ne!(point_hash(&c, &a), point_hash(&c, &b));
    let mut other = c.clone();
    other.set("dpg.iterations", "3").unwrap();
    assert_eq!(r_hash(&other, &a), r_hash(&c, &a));
    other.set("am.hidden", "3").unwrap();
    assert_ne!(r_hash(&other, &a), r_hash(&c, &a));
}

#[test]
fn method_labels() {
    assert_eq!(method_label(PotentialSource::Gam, Training2Method::DpgOff), "dpg_off");
    assert_eq!(method_label(PotentialSource::WnF, Training2Method::Distill), "wn_distill");
}

#[test]
fn a_point_runs_end_to_end_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny_config(dir.path());
    let point = c.points()[0].clone();
    let a = run_point(&c, &point, Some(dir.path())).unwrap();
    let b = run_point(&c, &point, None).unwrap();
    assert_eq!(a.rows.len(), 2);
    assert_eq!(a.rows, b.rows);
    let names: Vec<&str> = a.rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(names, ["distill", "dpg_off"]);
    let pdir = dir.path().join("points").join(point.name());
    for f in ["lambda.txt", "t1_trace.jsonl", "pi_distill.pol", "pi_dpg_off.pol", "t2_dpg_off.jsonl", "details.json"] {
        assert!(pdir.join(f).exists(), "{f}");
    }
    let row = &a.rows[0];
    assert!(row.ce_r.is_finite() && row.ce_pi.is_finite() && row.ce_plambda.is_finite());
    assert!((row.h_tok - crate::truth::true_entropy("101", 6).unwrap().per_token).abs() < 1e-15);
}

#[test]
fn exact_potential_skips_training1_and_pg_reports_collapse() {
    let mut c = tiny_config(Path::new("unused"));
    c.set("potential", "wn_f").unwrap();
    c.set("t2", "distill,pg").unwrap();
    let point = c.points()[0].clone();
    let out = run_point(&c, &point, None).unwrap();
    assert!(out.lambda.is_empty());
    assert_eq!(out.rows[0].method, "wn_distill");
    assert_eq!(out.rows[0].log_z_se, 0.0);
    assert_eq!(out.distill_acceptance, Some(1.0));
    assert!(out.collapse.is_some() && out.collapse_r.is_some());
    // ln Z of wn·F is the log fraction of strings containing the motif.
    let count = crate::truth::count_containing("101", 6).unwrap();
    let expected = (crate::truth::ln_big(&count) - 6.0 * 2f64.ln()).abs();
    assert!((out.rows[0].log_z.abs() - expected).abs() < 1e-12);
}
