//! Subcommand implementations.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;
use serde_json::json;

use mope_core::bundle::{
    load_offline, load_online, read_manifest, save_clusters, save_offline, save_online,
    save_student, Manifest, OnlineBundle, Variant,
};
use mope_core::clustering::{cluster_passwords, ClusterModel, KSelectionReport, SelectConfig};
use mope_core::corpus::{
    extract_pairs, load_keyed_passwords, load_pairs, load_passwords, write_pairs, Alphabet,
    LoadReport, MAX_PASSWORD_LEN,
};
use mope_core::distill::{distill, student_fidelity, DistillConfig};
use mope_core::expert::NGramConfig;
use mope_core::features::FEATURE_DIM;
use mope_core::offline::{
    crack_curve, generate, train_offline, CrackMode, GateMode, GenerationConfig, PasswordModel,
    SamplePool, Standalone,
};
use mope_core::online::{
    beam_search_batch, online_crack_rate, train_online, within_distance, OnlineConfig, OnlineMope,
};
use mope_core::psm::StrengthLevel;
use mope_core::Execution;

use crate::args::*;
use crate::record::RunRecorder;
use crate::server;
use crate::Failure;

pub const KSELECTION_FILE: &str = "kselection.json";

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "length",
    "digit_ratio",
    "lower_ratio",
    "upper_ratio",
    "special_ratio",
    "class_switches",
    "max_digit_run",
    "max_letter_run",
];

type CmdResult = Result<(), Failure>;

pub fn execute(cmd: &Command) -> CmdResult {
    match cmd {
        Command::Cluster(a) => cluster(a),
        Command::TrainOffline(a) => train_offline_cmd(a),
        Command::TrainOnline(a) => train_online_cmd(a),
        Command::Generate(a) => generate_cmd(a),
        Command::GuessNumber(a) => guess_number(a),
        Command::CrackEval(a) => crack_eval(a),
        Command::Pairs(a) => pairs(a),
        Command::Beam(a) => beam(a),
        Command::OnlineEval(a) => online_eval(a),
        Command::Distill(a) => distill_cmd(a),
        Command::Serve(a) => serve(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn exec() -> Execution {
    Execution::default()
}

fn alphabet_from(spec: &Option<String>) -> Result<Alphabet, Failure> {
    match spec {
        None => Ok(Alphabet::printable_ascii()),
        Some(s) => Ok(Alphabet::new(s.chars())?),
    }
}

fn note_rejects<T>(path: &Path, report: &LoadReport<T>) {
    if report.rejected_total() > 0 {
        log::warn!(
            "{}: kept {} records, skipped {} ({:?})",
            path.display(),
            report.records.len(),
            report.rejected_total(),
            report.rejected
        );
    } else {
        log::info!("{}: {} records", path.display(), report.records.len());
    }
}

fn read_passwords(path: &Path, alphabet: &Alphabet) -> Result<Vec<String>, Failure> {
    let report = load_passwords(path, alphabet)?;
    note_rejects(path, &report);
    Ok(report.records.into_iter().map(|r| r.password).collect())
}

fn as_strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, Failure> {
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).context("serializing JSON")?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Runs `body` against the output file, or standard output when none.
fn with_output(
    out: &Option<PathBuf>,
    body: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), Failure> {
    match out {
        Some(p) => {
            let mut w = create(p)?;
            body(&mut w).and_then(|()| w.flush())
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            body(&mut w).and_then(|()| w.flush())
        }
    }
    .context("writing output")?;
    Ok(())
}

fn select_config(
    k: KRange,
    step: usize,
    tau: f64,
    seed: u64,
    silhouette_cap: usize,
) -> SelectConfig {
    let mut sel = SelectConfig::new(k.min, k.max, tau, seed);
    sel.step = step;
    sel.silhouette_cap = (silhouette_cap > 0).then_some(silhouette_cap);
    sel.exec = exec();
    sel
}

fn report_selection(r: &KSelectionReport) {
    for (k, s) in &r.scores {
        log::info!("k = {k}: silhouette {s:.4}");
    }
    let how = if r.threshold_met {
        "first k above the threshold"
    } else {
        "no k above the threshold, best score used"
    };
    println!("k* = {} ({how})", r.k_star);
}

fn check_beta(beta: f64) -> Result<(), Failure> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("beta must be > 0, got {beta}")))
    }
}

fn cluster(a: &ClusterArgs) -> CmdResult {
    let run = RunRecorder::start("cluster", a)?;
    check_beta(a.beta)?;
    let alphabet = alphabet_from(&a.alphabet)?;
    let pws = read_passwords(&a.input, &alphabet)?;
    let sel = select_config(a.k_range, a.k_step, a.tau, a.seed, a.silhouette_cap);
    let (cm, report) = cluster_passwords(&as_strs(&pws), &sel)?;
    report_selection(&report);
    save_clusters(
        &a.out,
        &cm,
        &alphabet,
        MAX_PASSWORD_LEN,
        a.beta,
        run.digest(),
    )?;
    write_json(&a.out.join(KSELECTION_FILE), &report)?;
    run.finish(Some(a.seed), &[&a.input], &[&a.out])?;
    Ok(())
}

fn train_offline_cmd(a: &TrainOfflineArgs) -> CmdResult {
    let run = RunRecorder::start("train-offline", a)?;
    let m = read_manifest(&a.model)?;
    let beta = a.beta.unwrap_or(m.beta);
    check_beta(beta)?;
    let pws = read_passwords(&a.input, &m.alphabet)?;
    let ngram = NGramConfig {
        order: a.order,
        lambda: a.lambda,
        gamma: a.gamma,
    };
    let model = train_offline(
        &as_strs(&pws),
        m.cluster_model()?,
        &m.alphabet,
        &ngram,
        beta,
        m.max_len,
        exec(),
    )?;
    let out = a.out.as_ref().unwrap_or(&a.model);
    save_offline(out, &model, &ngram, None, run.digest())?;
    println!(
        "trained {} experts on {} passwords into {}",
        model.k(),
        pws.len(),
        out.display()
    );
    run.finish(None, &[&a.input, &a.model], &[out])?;
    Ok(())
}

fn train_online_cmd(a: &TrainOnlineArgs) -> CmdResult {
    let run = RunRecorder::start("train-online", a)?;
    check_beta(a.beta)?;
    let reused = a.clusters.as_deref().map(read_manifest).transpose()?;
    let alphabet = match &reused {
        Some(m) => m.alphabet.clone(),
        None => alphabet_from(&a.alphabet)?,
    };
    let report = load_pairs(&a.pairs, &alphabet)?;
    note_rejects(&a.pairs, &report);
    let total = report.records.len();
    let pairs: Vec<_> = report
        .records
        .into_iter()
        .filter(|p| within_distance(&p.src, &p.tgt, a.max_ed))
        .collect();
    if pairs.len() < total {
        log::warn!(
            "skipped {} pairs further apart than {} edits",
            total - pairs.len(),
            a.max_ed
        );
    }
    if pairs.is_empty() {
        return Err(Failure::Data(anyhow!(
            "no pairs within {} edits in {}",
            a.max_ed,
            a.pairs.display()
        )));
    }
    let cfg = OnlineConfig {
        lambda: a.lambda,
        gamma: a.gamma,
        max_ed: a.max_ed,
        beta: a.beta,
        beam_width: a.beam_width,
        top_k: a.top_k,
    };
    cfg.validate()?;
    let (cm, selection) = match &reused {
        Some(m) => (m.cluster_model()?, None),
        None => {
            let sources: Vec<&str> = pairs.iter().map(|p| p.src.as_str()).collect();
            let sel = select_config(a.k_range, a.k_step, a.tau, a.seed, a.silhouette_cap);
            let (cm, r) = cluster_passwords(&sources, &sel)?;
            report_selection(&r);
            (cm, Some(r))
        }
    };
    let model = train_online(&pairs, cm, &alphabet, &cfg)?;
    save_online(&a.out, &model, &cfg, MAX_PASSWORD_LEN, run.digest())?;
    if let Some(r) = selection {
        write_json(&a.out.join(KSELECTION_FILE), &r)?;
    }
    println!(
        "trained {} edit experts on {} pairs into {}",
        model.experts().len(),
        pairs.len(),
        a.out.display()
    );
    let mut inputs = vec![a.pairs.as_path()];
    inputs.extend(a.clusters.as_deref());
    run.finish(Some(a.seed), &inputs, &[&a.out])?;
    Ok(())
}

/// The mixture of an offline bundle, or its student when asked.
fn offline_model(
    dir: &Path,
    student: bool,
    mode: GateMode,
) -> Result<Box<dyn PasswordModel>, Failure> {
    let b = load_offline(dir)?;
    if !student {
        return Ok(Box::new(b.model.with_gate_mode(mode)));
    }
    let s = b.student.ok_or_else(|| {
        Failure::Data(anyhow!(
            "{} has no student; run `mope distill` first",
            dir.display()
        ))
    })?;
    Ok(Box::new(Standalone::new(
        s,
        b.model.alphabet().clone(),
        b.model.max_len(),
    )?))
}

/// Probabilities are written with 17 significant digits, enough to read
/// back the exact double.
fn fmt_prob(p: f64) -> String {
    format!("{p:.16e}")
}

fn generate_cmd(a: &GenerateArgs) -> CmdResult {
    let run = RunRecorder::start("generate", a)?;
    let model = offline_model(&a.model, a.student, a.gate_mode)?;
    let mut cfg = GenerationConfig::new(a.tau_gen, a.lmin, a.lmax.unwrap_or(model.max_len()));
    cfg.cap = a.cap;
    let cands = generate(model.as_ref(), &cfg, exec())?;
    let mut w = create(&a.out)?;
    for (pw, p) in &cands {
        writeln!(w, "{pw}\t{}", fmt_prob(*p)).context("writing candidates")?;
    }
    w.flush().context("writing candidates")?;
    let mass: f64 = cands.iter().map(|c| c.1).sum();
    println!(
        "{} candidates, total probability {mass:.6}, written to {}",
        cands.len(),
        a.out.display()
    );
    run.finish(None, &[&a.model], &[&a.out])?;
    Ok(())
}

fn level_name(g: f64) -> &'static str {
    match StrengthLevel::from_guess_number(g) {
        StrengthLevel::Weak => "weak",
        StrengthLevel::Medium => "medium",
        StrengthLevel::Strong => "strong",
    }
}

fn guess_number(a: &GuessNumberArgs) -> CmdResult {
    let run = RunRecorder::start("guess-number", a)?;
    let model = offline_model(&a.model, a.student, a.gate_mode)?;
    let pws = match (&a.password, &a.input) {
        (Some(p), _) => {
            if let Err(r) = model.alphabet().validate(p) {
                return Err(Failure::Data(anyhow!("password rejected: {r:?}")));
            }
            vec![p.clone()]
        }
        (None, Some(path)) => read_passwords(path, model.alphabet())?,
        (None, None) => return Err(Failure::Usage("give --password or --in".into())),
    };
    let pool = SamplePool::build(model.as_ref(), a.samples, a.seed, exec())?;
    let estimates = pool.estimate_all(model.as_ref(), &pws, exec())?;
    with_output(&a.out, |w| {
        writeln!(
            w,
            "password\tprobability\tguess_number\tlog10_guess_number\tlevel"
        )?;
        for e in &estimates {
            writeln!(
                w,
                "{}\t{}\t{:.6e}\t{:.4}\t{}",
                e.password,
                fmt_prob(e.probability),
                e.guess_number,
                e.log10_guess_number,
                level_name(e.guess_number)
            )?;
        }
        Ok(())
    })?;
    if let Some(out) = &a.out {
        let mut inputs = vec![a.model.as_path()];
        inputs.extend(a.input.as_deref());
        run.finish(Some(a.seed), &inputs, &[out])?;
    }
    Ok(())
}

fn crack_eval(a: &CrackEvalArgs) -> CmdResult {
    let run = RunRecorder::start("crack-eval", a)?;
    let mut models: Vec<(String, Box<dyn PasswordModel>)> = Vec::new();
    for dir in &a.model.0 {
        let label = dir.display().to_string();
        models.push((label.clone(), offline_model(dir, false, a.gate_mode)?));
        if a.student {
            models.push((
                format!("{label}:student"),
                offline_model(dir, true, a.gate_mode)?,
            ));
        }
    }
    let test = read_passwords(&a.test, models[0].1.alphabet())?;
    let refs: Vec<(&str, &dyn PasswordModel)> = models
        .iter()
        .map(|(l, m)| (l.as_str(), m.as_ref()))
        .collect();
    let mode = if a.min_auto {
        CrackMode::MinAuto
    } else {
        CrackMode::Single
    };
    let curves = crack_curve(&refs, &test, &a.budgets.0, mode, a.samples, a.seed, exec())?;
    let mut header = String::from("budget");
    for c in &curves {
        header.push('\t');
        header.push_str(&c.label);
    }
    println!("{header}");
    for (i, b) in a.budgets.0.iter().enumerate() {
        let mut row = format!("{b:e}");
        for c in &curves {
            row.push_str(&format!("\t{:.4}", c.fractions[i]));
        }
        println!("{row}");
    }
    if let Some(out) = &a.out {
        write_json(
            out,
            &json!({"test_size": test.len(), "samples": a.samples, "curves": curves}),
        )?;
        let mut inputs: Vec<&Path> = a.model.0.iter().map(PathBuf::as_path).collect();
        inputs.push(&a.test);
        run.finish(Some(a.seed), &inputs, &[out])?;
    }
    Ok(())
}

fn pairs(a: &PairsArgs) -> CmdResult {
    let run = RunRecorder::start("pairs", a)?;
    let alphabet = alphabet_from(&a.alphabet)?;
    let report = load_keyed_passwords(&a.input, &alphabet)?;
    note_rejects(&a.input, &report);
    let pairs = extract_pairs(&report.records, a.max_ed);
    write_pairs(&a.out, &pairs)?;
    println!(
        "{} pairs from {} records written to {}",
        pairs.len(),
        report.records.len(),
        a.out.display()
    );
    run.finish(None, &[&a.input], &[&a.out])?;
    Ok(())
}

/// Loads an online bundle, rebuilding it when the search settings change.
fn online_model(
    dir: &Path,
    beam_width: Option<usize>,
    top_k: Option<usize>,
) -> Result<OnlineMope, Failure> {
    let OnlineBundle { manifest, model } = load_online(dir)?;
    if beam_width.is_none() && top_k.is_none() {
        return Ok(model);
    }
    let base = manifest
        .online
        .ok_or_else(|| Failure::Data(anyhow!("online bundle without search settings")))?;
    let top_k = top_k.unwrap_or(base.top_k);
    let cfg = OnlineConfig {
        top_k,
        beam_width: beam_width.unwrap_or(base.beam_width.max(top_k)),
        ..base
    };
    Ok(OnlineMope::new(
        model.vocab().clone(),
        model.gate().clone(),
        model.experts().to_vec(),
        &cfg,
    )?)
}

fn beam(a: &BeamArgs) -> CmdResult {
    let run = RunRecorder::start("beam", a)?;
    let model = online_model(&a.model, a.beam_width, a.top_k)?;
    let sources = match (&a.src, &a.input) {
        (Some(s), _) => vec![s.clone()],
        (None, Some(path)) => read_passwords(path, model.vocab().alphabet())?,
        (None, None) => return Err(Failure::Usage("give --src or --in".into())),
    };
    let results = beam_search_batch(&model, &sources, exec())?;
    with_output(&a.out, |w| {
        for (src, cands) in sources.iter().zip(&results) {
            for (rank, (cand, score)) in cands.iter().enumerate() {
                writeln!(w, "{src}\t{}\t{cand}\t{}", rank + 1, fmt_prob(*score))?;
            }
        }
        Ok(())
    })?;
    if let Some(out) = &a.out {
        let mut inputs = vec![a.model.as_path()];
        inputs.extend(a.input.as_deref());
        run.finish(None, &inputs, &[out])?;
    }
    Ok(())
}

fn online_eval(a: &OnlineEvalArgs) -> CmdResult {
    let run = RunRecorder::start("online-eval", a)?;
    let largest = a.budgets.0.iter().copied().max().unwrap_or(1);
    let stored = read_manifest(&a.model)?
        .online
        .map_or(largest, |c| c.top_k.max(largest));
    let model = online_model(&a.model, a.beam_width, Some(a.top_k.unwrap_or(stored)))?;
    let report = load_pairs(&a.pairs, model.vocab().alphabet())?;
    note_rejects(&a.pairs, &report);
    let rates = online_crack_rate(&model, &report.records, &a.budgets.0, exec())?;
    println!("budget\thit_rate");
    for (b, r) in a.budgets.0.iter().zip(&rates) {
        println!("{b}\t{r:.4}");
    }
    if let Some(out) = &a.out {
        write_json(
            out,
            &json!({
                "pairs": report.records.len(),
                "budgets": a.budgets.0,
                "hit_rates": rates,
            }),
        )?;
        run.finish(None, &[&a.model, &a.pairs], &[out])?;
    }
    Ok(())
}

fn distill_cmd(a: &DistillArgs) -> CmdResult {
    let run = RunRecorder::start("distill", a)?;
    let b = load_offline(&a.model)?;
    let pws = read_passwords(&a.input, b.model.alphabet())?;
    let cfg = DistillConfig {
        alpha: a.alpha,
        sample_count: a.samples,
        ngram: NGramConfig {
            order: a.order,
            lambda: a.lambda,
            gamma: None,
        },
        ..DistillConfig::default()
    };
    let student = distill(&b.model, &as_strs(&pws), &cfg, a.seed, exec())?;
    save_student(&a.model, &student)?;
    let mut probes = BTreeSet::new();
    for pw in pws.iter().take(a.probes) {
        let chars: Vec<char> = pw.chars().collect();
        for i in 0..chars.len() {
            probes.insert(chars[..i].iter().collect::<String>());
        }
    }
    let probes: Vec<String> = probes.into_iter().collect();
    let standalone = Standalone::new(student, b.model.alphabet().clone(), b.model.max_len())?;
    if !probes.is_empty() {
        let kl = student_fidelity(&b.model, &standalone, &probes)?;
        println!(
            "student written to {}; mean KL(teacher || student) over {} prefixes: {kl:.5}",
            a.model.display(),
            probes.len()
        );
    }
    run.finish(Some(a.seed), &[&a.model, &a.input], &[&a.model])?;
    Ok(())
}

fn serve(a: &ServeArgs) -> CmdResult {
    let meter = match &a.model {
        Some(dir) => match server::load_meter(dir, a.full, a.pool_size, a.seed) {
            Ok((m, source)) => {
                log::info!(
                    "meter ready: {source:?} model from {}, {} samples",
                    dir.display(),
                    m.pool_size()
                );
                Some(m)
            }
            Err(e) => {
                log::error!("model not loaded from {}: {e}", dir.display());
                None
            }
        },
        None => {
            log::error!("no model directory given; set --model or MOPE_MODEL_DIR");
            None
        }
    };
    let app =
        server::router(meter, &a.cors_origins.0).map_err(|e| Failure::Usage(e.to_string()))?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting the async runtime")?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .with_context(|| format!("binding {}:{}", a.host, a.port))?;
        log::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
                log::info!("shutting down");
            })
            .await
            .context("serving")
    })?;
    Ok(())
}

#[derive(Serialize)]
struct ClusterStats {
    index: usize,
    size: usize,
    share: f64,
    /// Center in raw feature units.
    center: serde_json::Map<String, serde_json::Value>,
}

fn cluster_stats(m: &Manifest, cm: &ClusterModel) -> Vec<ClusterStats> {
    let total: usize = m.cluster_sizes.iter().sum();
    cm.centers
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let s = &cm.standardizer;
            let center = FEATURE_NAMES
                .iter()
                .enumerate()
                .map(|(f, name)| {
                    let raw = s.means[f] + c.0[f] * s.stds[f];
                    (name.to_string(), json!(raw))
                })
                .collect();
            ClusterStats {
                index: j,
                size: m.cluster_sizes[j],
                share: m.cluster_sizes[j] as f64 / total.max(1) as f64,
                center,
            }
        })
        .collect()
}

fn inspect(a: &InspectArgs) -> CmdResult {
    let m = read_manifest(&a.model)?;
    let cm = m.cluster_model()?;
    let selection: Option<KSelectionReport> =
        match fs::read_to_string(a.model.join(KSELECTION_FILE)) {
            Ok(text) => Some(serde_json::from_str(&text).context("reading k selection report")?),
            Err(_) => None,
        };
    let variant = match m.variant {
        Variant::Clusters => "clusters",
        Variant::Offline => "offline",
        Variant::Online => "online",
    };
    let summary = json!({
        "variant": variant,
        "schema_version": m.schema_version,
        "alphabet_size": m.alphabet.len(),
        "max_len": m.max_len,
        "k": m.k,
        "beta": m.beta,
        "experts": m.experts,
        "student": m.student,
        "ngram": m.ngram,
        "online": m.online,
        "training_config_digest": m.training_config_digest,
        "k_selection": selection,
        "clusters": cluster_stats(&m, &cm),
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).context("serializing summary")?
    );
    Ok(())
}
