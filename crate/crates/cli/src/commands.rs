use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use logitfix_core::analysis::{
    bc_matrix, knockout_test, logits_mean_histogram, supporting_classes, Ranking, SupportReport,
};
use logitfix_core::attacks::{attack_dataset, AttackConfig, AttackKind, AttackOutcome, Preset};
use logitfix_core::classifier::{
    evaluate_accuracy, select_correct_subset, train_classifier, Accuracy, Architecture, ClassifierSpec, EpochLog,
    LabeledExample,
};
use logitfix_core::defender::{
    evaluate_defense, logits_records, train_defender, transfer_matrix, DefenderConfig, LogitsSet,
};
use logitfix_core::io::checkpoint::{load_checkpoint, save_checkpoint};
use logitfix_core::io::config::Manifest;
use logitfix_core::io::idx::{load_idx_dataset, sibling_labels_path};
use logitfix_core::io::logits::{load_logits_store, LogitsStore};
use logitfix_core::io::{checksum_hex, file_checksum, sha256, write_atomic, Checksum};
use logitfix_core::nn::Network;
use logitfix_core::{Error, Result};

use crate::settings::{parse_list, split_pair, Settings};
use crate::{
    AnalyzeCommand, AttackArgs, BhattacharyyaArgs, Cli, Command, DataArgs, EvaluateArgs, HistArgs, KnockoutArgs,
    SupportArgs, TrainClassifierArgs, TrainDefenderArgs, TransferArgs,
};

/// Output directory, settings and manifest bookkeeping for one command.
struct Run {
    out: PathBuf,
    settings: Settings,
    manifest: Manifest,
    started: Instant,
}

impl Run {
    fn input(&mut self, path: &Path) -> Result<Checksum> {
        let sum = file_checksum(path)?;
        self.manifest
            .inputs
            .push((path.display().to_string(), checksum_hex(&sum)));
        Ok(sum)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.out.join(name);
        write_atomic(&path, bytes)?;
        self.manifest.outputs.push(name.to_string());
        Ok(path)
    }

    fn finish(mut self, config: Vec<(String, String)>) -> Result<()> {
        self.manifest.config = config;
        self.manifest.wall_time_secs = self.started.elapsed().as_secs_f64();
        self.manifest.write(&self.out.join("manifest.txt"))
    }
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let bad = |e: csv::Error| Error::InvalidData(format!("csv: {e}"));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(bad)?;
    for r in rows {
        w.write_record(r).map_err(bad)?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidData(format!("csv: {}", e.error())))
}

fn accuracy_cells(a: &Accuracy) -> [String; 3] {
    [a.correct.to_string(), a.total.to_string(), a.fraction().to_string()]
}

fn load_data(run: &mut Run, args: &DataArgs) -> Result<Vec<LabeledExample>> {
    let labels = match &args.labels {
        Some(l) => l.clone(),
        None => sibling_labels_path(&args.data).ok_or_else(|| {
            Error::Config(format!(
                "cannot infer labels file for {}; pass --labels",
                args.data.display()
            ))
        })?,
    };
    run.input(&args.data)?;
    run.input(&labels)?;
    load_idx_dataset(&args.data, &labels)
}

fn load_network(run: &mut Run, path: &Path) -> Result<(Network, Checksum)> {
    run.input(path)?;
    let (ck, sum) = load_checkpoint(path)?;
    Ok((ck.network, sum))
}

fn load_store(run: &mut Run, path: &Path) -> Result<LogitsStore> {
    run.input(path)?;
    load_logits_store(path)
}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::Io {
        path: cli.out.clone(),
        source: e,
    })?;
    let settings = Settings::load(cli.config.as_deref())?;
    let seed = settings.or("seed", cli.seed, 0u64)?;
    let name = match &cli.command {
        Command::TrainClassifier(_) => "train-classifier",
        Command::Attack(_) => "attack",
        Command::BuildLogits(_) => "build-logits",
        Command::TrainDefender(_) => "train-defender",
        Command::Evaluate(_) => "evaluate",
        Command::TransferMatrix(_) => "transfer-matrix",
        Command::Analyze(AnalyzeCommand::SupportingClasses(_)) => "analyze supporting-classes",
        Command::Analyze(AnalyzeCommand::Bhattacharyya(_)) => "analyze bhattacharyya",
        Command::Analyze(AnalyzeCommand::Knockout(_)) => "analyze knockout",
        Command::Analyze(AnalyzeCommand::LogitsHist(_)) => "analyze logits-hist",
    };
    let mut run = Run {
        out: cli.out.clone(),
        settings,
        manifest: Manifest {
            command: name.to_string(),
            argv,
            seeds: vec![("seed".into(), seed)],
            ..Default::default()
        },
        started: Instant::now(),
    };
    if let Some(path) = &cli.config {
        run.input(path)?;
    }
    let config = match &cli.command {
        Command::TrainClassifier(a) => train_classifier_cmd(&mut run, a, seed)?,
        Command::Attack(a) => attack_cmd(&mut run, a, seed, true)?,
        Command::BuildLogits(a) => attack_cmd(&mut run, a, seed, false)?,
        Command::TrainDefender(a) => train_defender_cmd(&mut run, a, seed)?,
        Command::Evaluate(a) => evaluate_cmd(&mut run, a)?,
        Command::TransferMatrix(a) => transfer_cmd(&mut run, a)?,
        Command::Analyze(AnalyzeCommand::SupportingClasses(a)) => support_cmd(&mut run, a)?,
        Command::Analyze(AnalyzeCommand::Bhattacharyya(a)) => bhattacharyya_cmd(&mut run, a)?,
        Command::Analyze(AnalyzeCommand::Knockout(a)) => knockout_cmd(&mut run, a)?,
        Command::Analyze(AnalyzeCommand::LogitsHist(a)) => hist_cmd(&mut run, a)?,
    };
    run.settings.finish()?;
    run.finish(config)
}

fn epoch_rows(logs: &[EpochLog]) -> Vec<Vec<String>> {
    logs.iter()
        .map(|l| {
            let [c, t, f] = accuracy_cells(&l.train_accuracy);
            vec![l.epoch.to_string(), l.mean_loss.to_string(), c, t, f]
        })
        .collect()
}

const EPOCH_HEADER: [&str; 5] = ["epoch", "mean_loss", "train_correct", "train_total", "train_accuracy"];

fn train_classifier_cmd(run: &mut Run, a: &TrainClassifierArgs, seed: u64) -> Result<Vec<(String, String)>> {
    let s = &run.settings;
    let arch: Architecture = s.or("arch", a.arch.clone(), "cnn-small".to_string())?.parse()?;
    let mut spec = ClassifierSpec::new(arch);
    if let Some(w) = s.get::<String>("widths", a.widths.clone())? {
        spec.widths = parse_list(&w)?;
    }
    spec.epochs = s.or("epochs", a.epochs, spec.epochs)?;
    spec.batch_size = s.or("batch_size", a.batch_size, spec.batch_size)?;
    spec.learning_rate = s.or("lr", a.lr, spec.learning_rate)?;
    spec.lr_decay = s.or("lr_decay", a.lr_decay, spec.lr_decay)?;
    spec.weight_decay = s.or("weight_decay", a.weight_decay, spec.weight_decay)?;
    spec.seed = seed;

    let train = load_data(run, &a.data)?;
    let (net, logs) = train_classifier(&train, &spec, |l| {
        println!("epoch {} loss {:.4} train {}", l.epoch, l.mean_loss, l.train_accuracy);
    })?;
    let echo = spec.echo();
    let path = run.out.join("classifier.ckpt");
    save_checkpoint(&path, &net, &echo)?;
    run.manifest.outputs.push("classifier.ckpt".into());
    run.write("train_log.csv", &csv_bytes(&EPOCH_HEADER, &epoch_rows(&logs))?)?;
    if let Some(test) = &a.test {
        let test = load_data(
            run,
            &DataArgs {
                data: test.clone(),
                labels: a.test_labels.clone(),
            },
        )?;
        let acc = evaluate_accuracy(&net, &test)?;
        println!("test accuracy {acc}");
        let [c, t, f] = accuracy_cells(&acc);
        run.write(
            "metrics.csv",
            &csv_bytes(
                &["set", "correct", "total", "accuracy"],
                &[vec!["test".into(), c, t, f]],
            )?,
        )?;
    }
    Ok(echo)
}

fn outcome_row(i: usize, ex: &LabeledExample, o: &Result<AttackOutcome>) -> Vec<String> {
    match o {
        Ok(o) => vec![
            i.to_string(),
            ex.label.to_string(),
            o.success.to_string(),
            o.linf.to_string(),
            o.l2.to_string(),
            o.iterations.to_string(),
            String::new(),
        ],
        Err(e) => vec![
            i.to_string(),
            ex.label.to_string(),
            "false".into(),
            String::new(),
            String::new(),
            String::new(),
            e.kind().to_string(),
        ],
    }
}

fn attack_cmd(run: &mut Run, a: &AttackArgs, seed: u64, with_outcomes: bool) -> Result<Vec<(String, String)>> {
    let s = &run.settings;
    let kind: AttackKind = s.or("attack", a.attack.clone(), "pgd".to_string())?.parse()?;
    let preset: Preset = s.or("preset", a.preset.clone(), "desk-mnist".to_string())?.parse()?;
    let mut cfg = AttackConfig::preset(kind, preset);
    cfg.seed = seed;
    // file entries first, then flags
    for (k, v) in s.remaining() {
        if cfg.set(&k, &v)? {
            s.mark_used(&k);
        }
    }
    if let Some(e) = a.epsilon {
        cfg.epsilon = e;
    }
    if let Some(v) = a.step_size {
        cfg.step_size = v;
    }
    if let Some(v) = a.iterations {
        cfg.iterations = v;
    }
    for p in &a.params {
        let (k, v) = split_pair(p)?;
        if k == "attack" || !cfg.set(k, v)? {
            return Err(Error::Config(format!("'{k}' is not an attack setting")));
        }
    }
    cfg.seed = seed;
    cfg.validate()?;
    let limit = s.get::<usize>("limit", a.limit)?;
    let per_class = s.get::<usize>("select_per_class", a.select_per_class)?;
    let parallelism = s.or("parallelism", a.parallelism, 0usize)?;

    let (net, model_sum) = load_network(run, &a.model)?;
    let mut data = load_data(run, &a.data)?;
    if let Some(n) = limit {
        data.truncate(n);
    }
    let mut indices: Vec<usize> = (0..data.len()).collect();
    if let Some(n) = per_class {
        let sel = select_correct_subset(&net, &data, n)?;
        let rows: Vec<Vec<String>> = sel
            .per_class
            .iter()
            .enumerate()
            .map(|(c, &k)| vec![c.to_string(), k.to_string(), sel.missing.contains(&c).to_string()])
            .collect();
        run.write("selection.csv", &csv_bytes(&["class", "selected", "missing"], &rows)?)?;
        if !sel.missing.is_empty() {
            println!("no correctly classified example for classes {:?}", sel.missing);
        }
        indices = sel.indices;
        data = sel.examples;
    }

    let attack_run = attack_dataset(&net, &data, &cfg, parallelism)?;
    let summary = attack_run.summary.clone();
    if with_outcomes {
        let rows: Vec<Vec<String>> = attack_run
            .outcomes
            .iter()
            .zip(&data)
            .zip(&indices)
            .map(|((o, ex), &i)| outcome_row(i, ex, o))
            .collect();
        run.write(
            "outcomes.csv",
            &csv_bytes(
                &["source", "label", "success", "linf", "l2", "iterations", "error"],
                &rows,
            )?,
        )?;
    }
    let set = LogitsSet {
        attack: kind,
        records: logits_records(&net, &data, &attack_run.outcomes)?,
    };
    let store = LogitsStore::new(set, net.classes(), model_sum)?;
    run.write("logits.lgt", &store.encode())?;
    let row = vec![
        kind.id().to_string(),
        summary.count.to_string(),
        summary.errors.to_string(),
        summary.successes.to_string(),
        summary.success_rate().to_string(),
        summary.mean_linf.to_string(),
        summary.mean_l2.to_string(),
        summary.mean_iterations.to_string(),
    ];
    run.write(
        "summary.csv",
        &csv_bytes(
            &[
                "attack",
                "count",
                "errors",
                "successes",
                "success_rate",
                "mean_linf",
                "mean_l2",
                "mean_iterations",
            ],
            &[row],
        )?,
    )?;
    println!(
        "{kind}: {} examples, success rate {:.4}, mean l2 {:.4}",
        summary.count,
        summary.success_rate(),
        summary.mean_l2
    );
    let mut echo = cfg.to_pairs();
    echo.push(("preset".into(), preset.id().into()));
    if let Some(n) = limit {
        echo.push(("limit".into(), n.to_string()));
    }
    if let Some(n) = per_class {
        echo.push(("select_per_class".into(), n.to_string()));
    }
    Ok(echo)
}

fn train_defender_cmd(run: &mut Run, a: &TrainDefenderArgs, seed: u64) -> Result<Vec<(String, String)>> {
    let s = &run.settings;
    let mut cfg = match s.or("preset", a.preset.clone(), "desk".to_string())?.as_str() {
        "desk" => DefenderConfig::default(),
        "paper" => DefenderConfig::paper(),
        other => return Err(Error::Config(format!("unknown defender preset '{other}'"))),
    };
    cfg.hidden = s.or("hidden", a.hidden, cfg.hidden)?;
    cfg.keep = s.or("keep", a.keep, cfg.keep)?;
    cfg.clean_prob = s.or("clean_prob", a.clean_prob, cfg.clean_prob)?;
    cfg.epochs = s.or("epochs", a.epochs, cfg.epochs)?;
    cfg.batch_size = s.or("batch_size", a.batch_size, cfg.batch_size)?;
    cfg.learning_rate = s.or("lr", a.lr, cfg.learning_rate)?;
    cfg.weight_decay = s.or("weight_decay", a.weight_decay, cfg.weight_decay)?;
    if let Some(d) = s.get::<String>("depth", a.depth.clone())? {
        cfg.depth = d.parse()?;
    }
    cfg.seed = seed;

    let store = load_store(run, &a.logits)?;
    if let Some(model) = &a.model {
        store.verify_classifier(&run.input(model)?)?;
    }
    let (g, logs) = train_defender(&store.set.records, &cfg, |l| {
        println!("epoch {} loss {:.4} train {}", l.epoch, l.mean_loss, l.train_accuracy);
    })?;
    let mut echo = cfg.echo();
    echo.push(("attack".into(), store.set.attack.id().into()));
    echo.push(("logits_sha256".into(), checksum_hex(&sha256(&store.encode()))));
    save_checkpoint(&run.out.join("defender.ckpt"), &g, &echo)?;
    run.manifest.outputs.push("defender.ckpt".into());
    run.write("train_log.csv", &csv_bytes(&EPOCH_HEADER, &epoch_rows(&logs))?)?;
    Ok(echo)
}

fn evaluate_cmd(run: &mut Run, a: &EvaluateArgs) -> Result<Vec<(String, String)>> {
    let set_id = run.settings.or("set_id", a.set_id.clone(), "full".to_string())?;
    let (g, _) = load_network(run, &a.defender)?;
    let store = load_store(run, &a.logits)?;
    let r = evaluate_defense(&g, &store.set.records, &set_id)?;
    let attack = store.set.attack.id();
    let rows: Vec<Vec<String>> = [
        ("clean", "no-defense", &r.clean_no_defense),
        ("clean", "corrected", &r.clean_corrected),
        ("adversarial", "no-defense", &r.adversarial_no_defense),
        ("adversarial", "corrected", &r.adversarial_corrected),
    ]
    .into_iter()
    .map(|(input, defense, acc)| {
        println!("{set_id} {attack} {input:>11} {defense:>10}: {acc}");
        let [c, t, f] = accuracy_cells(acc);
        vec![
            set_id.clone(),
            attack.to_string(),
            input.into(),
            defense.into(),
            c,
            t,
            f,
        ]
    })
    .collect();
    run.write(
        "evaluation.csv",
        &csv_bytes(
            &["set", "attack", "input", "defense", "correct", "total", "accuracy"],
            &rows,
        )?,
    )?;
    Ok(vec![("set_id".into(), set_id)])
}

fn keyed_paths(raw: &[String]) -> Result<BTreeMap<AttackKind, PathBuf>> {
    let mut out = BTreeMap::new();
    for r in raw {
        let (k, v) = split_pair(r)?;
        if out.insert(k.parse()?, PathBuf::from(v)).is_some() {
            return Err(Error::Config(format!("attack '{k}' given twice")));
        }
    }
    Ok(out)
}

fn transfer_cmd(run: &mut Run, a: &TransferArgs) -> Result<Vec<(String, String)>> {
    let mut defenders = BTreeMap::new();
    for (k, p) in keyed_paths(&a.defenders)? {
        defenders.insert(k, load_network(run, &p)?.0);
    }
    let mut sets = BTreeMap::new();
    for (k, p) in keyed_paths(&a.logits)? {
        let store = load_store(run, &p)?;
        if store.set.attack != k {
            return Err(Error::Config(format!(
                "{} holds {} records, not {k}",
                p.display(),
                store.set.attack
            )));
        }
        sets.insert(k, store.set.records);
    }
    let m = transfer_matrix(&defenders, &sets)?;
    let mut header = vec!["attack".to_string()];
    header.extend(m.defenders.iter().map(|d| format!("defender_{d}")));
    let rows: Vec<Vec<String>> = m
        .attacks
        .iter()
        .zip(&m.cells)
        .map(|(attack, cells)| {
            let mut row = vec![attack.id().to_string()];
            row.extend(
                cells
                    .iter()
                    .map(|c| c.map_or_else(|| "NA".to_string(), |acc| acc.fraction().to_string())),
            );
            println!("{}", row.join(" "));
            row
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    run.write("transfer_matrix.csv", &csv_bytes(&header, &rows)?)?;
    Ok(Vec::new())
}

const DEFAULT_SUPPORT_N: usize = 3;

fn support_report(run: &mut Run, defender: &Path, logits: &Path, n: usize, ranking: Ranking) -> Result<SupportReport> {
    let (g, _) = load_network(run, defender)?;
    let store = load_store(run, logits)?;
    supporting_classes(&g, &store.set.records, n, ranking)
}

fn support_cmd(run: &mut Run, a: &SupportArgs) -> Result<Vec<(String, String)>> {
    let n = run.settings.or("n", a.n, DEFAULT_SUPPORT_N)?;
    let ranking: Ranking = run
        .settings
        .or("ranking", a.ranking.clone(), "support".to_string())?
        .parse()?;
    let rep = support_report(run, &a.defender, &a.logits, n, ranking)?;
    let mut rows = Vec::new();
    for (i, img) in rep.per_image.iter().enumerate() {
        for (rank, (k, score)) in img.top.iter().enumerate() {
            rows.push(vec![
                i.to_string(),
                img.label.to_string(),
                (rank + 1).to_string(),
                k.to_string(),
                score.to_string(),
            ]);
        }
    }
    run.write(
        "support_per_image.csv",
        &csv_bytes(&["source", "label", "rank", "class", "score"], &rows)?,
    )?;
    let supporting = rep.supporting_classes();
    let rows: Vec<Vec<String>> = rep
        .frequencies
        .iter()
        .enumerate()
        .map(|(k, f)| vec![k.to_string(), f.to_string(), supporting.contains(&k).to_string()])
        .collect();
    run.write(
        "support_frequencies.csv",
        &csv_bytes(&["class", "frequency", "supporting"], &rows)?,
    )?;
    println!("supporting classes {:?}", rep.supporting);
    Ok(vec![
        ("n".into(), n.to_string()),
        ("ranking".into(), ranking.id().into()),
    ])
}

fn read_frequencies(run: &mut Run, path: &Path) -> Result<Vec<f64>> {
    run.input(path)?;
    let bad = |e: csv::Error| Error::Corrupt {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    let mut r = csv::Reader::from_path(path).map_err(bad)?;
    let mut counts = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(bad)?;
        let f: f64 = rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| Error::Corrupt {
            path: path.to_path_buf(),
            detail: "missing frequency column".into(),
        })?;
        counts.push(f);
    }
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return Err(Error::NotNormalized(format!("{} has no counts", path.display())));
    }
    Ok(counts.into_iter().map(|c| c / total).collect())
}

fn bhattacharyya_cmd(run: &mut Run, a: &BhattacharyyaArgs) -> Result<Vec<(String, String)>> {
    if a.supports.len() < 2 {
        return Err(Error::Config("need at least two --support tables".into()));
    }
    let mut named = Vec::new();
    for raw in &a.supports {
        let (name, path) = split_pair(raw)?;
        named.push((name.to_string(), read_frequencies(run, Path::new(path))?));
    }
    let m = bc_matrix(&named)?;
    let mut header = vec!["support".to_string()];
    header.extend(m.labels.iter().cloned());
    let rows: Vec<Vec<String>> = m
        .labels
        .iter()
        .zip(&m.values)
        .map(|(n, vals)| {
            let mut row = vec![n.clone()];
            row.extend(vals.iter().map(f64::to_string));
            println!("{}", row.join(" "));
            row
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    run.write("bc_matrix.csv", &csv_bytes(&header, &rows)?)?;
    Ok(Vec::new())
}

fn knockout_cmd(run: &mut Run, a: &KnockoutArgs) -> Result<Vec<(String, String)>> {
    let delta = run.settings.or("delta", a.delta, 20.0f32)?;
    let explicit = run.settings.get::<String>("classes", a.classes.clone())?;
    let n = run.settings.or("n", a.n, DEFAULT_SUPPORT_N)?;
    let ranking: Ranking = run
        .settings
        .or("ranking", a.ranking.clone(), "support".to_string())?
        .parse()?;
    let (g, _) = load_network(run, &a.defender)?;
    let store = load_store(run, &a.logits)?;
    let classes = match &explicit {
        Some(list) => parse_list(list)?,
        None => supporting_classes(&g, &store.set.records, n, ranking)?.supporting_classes(),
    };
    let r = knockout_test(&g, &store.set.records, &classes, delta)?;
    println!("knock out {:?} by {delta}: {} -> {}", r.classes, r.before, r.after);
    let list = r.classes.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    let rows: Vec<Vec<String>> = [("before", &r.before), ("after", &r.after)]
        .into_iter()
        .map(|(stage, acc)| {
            let [c, t, f] = accuracy_cells(acc);
            vec![stage.into(), list.clone(), delta.to_string(), c, t, f]
        })
        .collect();
    run.write(
        "knockout.csv",
        &csv_bytes(&["stage", "classes", "delta", "correct", "total", "accuracy"], &rows)?,
    )?;
    let mut echo = vec![("delta".into(), delta.to_string())];
    match explicit {
        Some(c) => echo.push(("classes".into(), c)),
        None => {
            echo.push(("n".into(), n.to_string()));
            echo.push(("ranking".into(), ranking.id().into()));
        }
    }
    Ok(echo)
}

fn hist_cmd(run: &mut Run, a: &HistArgs) -> Result<Vec<(String, String)>> {
    let bins = run.settings.or("bins", a.bins, 20usize)?;
    let store = load_store(run, &a.logits)?;
    let clean: Vec<_> = store.set.records.iter().map(|r| r.z.clone()).collect();
    let adv: Vec<_> = store.set.records.iter().map(|r| r.z_adv.clone()).collect();
    let h = logits_mean_histogram(&clean, &adv, bins)?;
    let rows: Vec<Vec<String>> = (0..bins)
        .map(|b| {
            vec![
                b.to_string(),
                h.edges[b].to_string(),
                h.edges[b + 1].to_string(),
                h.clean.counts[b].to_string(),
                h.adversarial.counts[b].to_string(),
            ]
        })
        .collect();
    run.write(
        "logits_hist.csv",
        &csv_bytes(&["bin", "lower", "upper", "clean", "adversarial"], &rows)?,
    )?;
    let rows: Vec<Vec<String>> = [("clean", &h.clean), ("adversarial", &h.adversarial)]
        .into_iter()
        .map(|(name, p)| vec![name.into(), p.size.to_string(), p.mean.to_string(), p.sd.to_string()])
        .collect();
    run.write(
        "logits_hist_stats.csv",
        &csv_bytes(&["population", "size", "mean", "sd"], &rows)?,
    )?;
    println!(
        "mean logit clean {:.4} adversarial {:.4}, gap {:.2} standard errors",
        h.clean.mean,
        h.adversarial.mean,
        h.gap_z()
    );
    Ok(vec![("bins".into(), bins.to_string())])
}
