use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use chrono::NaiveDateTime;
use somnoline_core::agreement::{self, AssignmentLayout};
use somnoline_core::edf::{self, NightManifest};
use somnoline_core::gray::{self, DEFAULT_MAX_ITER, DEFAULT_TOL};
use somnoline_core::scoring::{self, ScorerSpec};
use somnoline_core::staging;
use somnoline_pipeline::bench::{run_bench, BenchConfig};
use somnoline_pipeline::{
    JobKind, JobQueue, NoFaults, Notifier, Processor, Splitter, Storage, SystemClock, Worker,
};
use somnoline_service::{HttpNotifier, HttpQueue, Platform, Role, User};

use crate::config::FileConfig;
use crate::{Cli, CliError, Command, RoleArg, WorkerKind};

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// A file when `path` is given, stdout otherwise.
fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| internal(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Split { input, gap, manifest, out } => split(&input, gap, manifest.as_deref(), &out),
        Command::Score { night, hypnodensity, baseline, epoch_length, out } => {
            let spec = match (hypnodensity, baseline) {
                (Some(source), None) => ScorerSpec::Precomputed { source },
                (None, Some(channel_label)) => ScorerSpec::Baseline {
                    channel_label,
                    coefficients: Default::default(),
                },
                _ => return Err(CliError::Usage("give exactly one of --hypnodensity or --baseline".into())),
            };
            score(&night, &spec, epoch_length, out.as_deref())
        }
        Command::Gray { hypnodensity, threshold, fit, epoch_length, out, labels } => {
            gray_tag(&hypnodensity, (!fit).then_some(threshold), epoch_length, out.as_deref(), labels.as_deref())
        }
        Command::Kappa { ratings, layout, mask, report, epoch_length } => {
            kappa(&ratings, layout.as_deref(), mask.as_deref(), report.as_deref(), epoch_length)
        }
        Command::Bench { sizes, trials, unit_bytes, work_dir, csv } => {
            bench(sizes, trials, unit_bytes, work_dir, csv.as_deref())
        }
        Command::Serve { listen, workers } => serve(&FileConfig::load(cli.config.as_deref())?, listen, workers),
        Command::Worker { kind, server } => worker(&FileConfig::load(cli.config.as_deref())?, kind, server),
        Command::HashSecret { username, center, role, secret, users_file } => {
            hash_secret(&username, &center, role, secret, users_file.as_deref())
        }
    }
}

fn split(input: &Path, gap: f64, manifest: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let rec = edf::read_file(input).map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
    let manifest = manifest
        .map(|p| {
            let mut text = String::new();
            open(p)?.read_to_string(&mut text).map_err(data)?;
            NightManifest::from_json(&text).map_err(data)
        })
        .transpose()?;
    let ranges = edf::detect_night_boundaries(&rec, gap, manifest.as_ref()).map_err(data)?;
    let nights = edf::split_nights(&rec, &ranges).map_err(data)?;
    std::fs::create_dir_all(out).map_err(internal)?;
    let mut stdout = io::stdout().lock();
    for (n, night) in nights.iter().enumerate() {
        let path = out.join(format!("night-{n}.edf"));
        edf::write_file(night, &path).map_err(internal)?;
        writeln!(
            stdout,
            "{}\t{} records\t{}",
            path.display(),
            night.records.len(),
            night.header.start_datetime
        )
        .map_err(internal)?;
    }
    Ok(())
}

fn score(night: &Path, spec: &ScorerSpec, epoch_length: f64, out: Option<&Path>) -> Result<(), CliError> {
    let rec = edf::read_file(night).map_err(|e| CliError::Data(format!("{}: {e}", night.display())))?;
    let h = scoring::score(&rec, spec, epoch_length).map_err(data)?;
    staging::write_hypnodensity_csv(&h, output(out)?).map_err(internal)
}

fn gray_tag(
    input: &Path,
    threshold: Option<f64>,
    epoch_length: f64,
    out: Option<&Path>,
    labels: Option<&Path>,
) -> Result<(), CliError> {
    let h = staging::read_hypnodensity_csv(open(input)?, epoch_length).map_err(data)?;
    let certainty = gray::certainty(&h);
    let threshold = match threshold {
        Some(t) => t,
        None => {
            let fit = gray::fit_threshold(&certainty, DEFAULT_MAX_ITER, DEFAULT_TOL).map_err(data)?;
            for (name, c) in ["gray", "clear"].iter().zip(&fit.components) {
                eprintln!(
                    "{name} component: weight {:.3}, Beta({:.3}, {:.3})",
                    c.weight, c.alpha, c.beta
                );
            }
            if !fit.converged {
                eprintln!("warning: mixture did not converge in {} iterations", fit.iterations);
            }
            fit.fitted_threshold
        }
    };
    let mask = gray::tag_series(&certainty, threshold).map_err(data)?;
    gray::write_mask_csv(&mask, output(out)?).map_err(internal)?;
    if let Some(path) = labels {
        let hyp = staging::hypnodensity_to_hypnogram(&h, NaiveDateTime::default());
        let star = gray::apply_mask(&hyp, &mask).map_err(data)?;
        staging::write_labels_csv(&staging::encode_scoring_labels(&star), output(Some(path))?).map_err(internal)?;
    }
    eprintln!(
        "{} of {} epochs gray at threshold {threshold:.4}",
        mask.gray_count(),
        mask.len()
    );
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut w = output(Some(path))?;
    serde_json::to_writer_pretty(&mut w, value).map_err(internal)?;
    writeln!(w).map_err(internal)
}

fn kappa(
    ratings: &Path,
    layout: Option<&Path>,
    mask: Option<&Path>,
    report: Option<&Path>,
    epoch_length: f64,
) -> Result<(), CliError> {
    let mut stdout = io::stdout().lock();
    match layout {
        None => {
            let r = agreement::kappa_for_directory(ratings, mask, epoch_length).map_err(data)?;
            writeln!(stdout, "epochs\t{}", r.n_epochs).map_err(internal)?;
            writeln!(stdout, "overall kappa\t{:.4}", r.overall_kappa).map_err(internal)?;
            if mask.is_some() {
                let gray = r.gray_only_kappa.map_or("n/a".into(), |k| format!("{k:.4}"));
                writeln!(stdout, "gray epochs\t{}", r.n_gray_epochs).map_err(internal)?;
                writeln!(stdout, "gray-only kappa\t{gray}").map_err(internal)?;
            }
            report.map(|p| write_json(p, &r)).transpose()?;
        }
        Some(layout) => {
            let layout = AssignmentLayout::from_path(layout).map_err(data)?;
            let scorings = agreement::load_scorings(ratings, mask, &layout, epoch_length).map_err(data)?;
            let table = agreement::kappa_report(&layout, &scorings).map_err(data)?;
            write!(stdout, "{}", table.to_text()).map_err(internal)?;
            report.map(|p| write_json(p, &table)).transpose()?;
        }
    }
    Ok(())
}

fn bench(
    sizes: Vec<f64>,
    trials: usize,
    unit_bytes: u64,
    work_dir: Option<PathBuf>,
    csv: Option<&Path>,
) -> Result<(), CliError> {
    if trials == 0 || sizes.is_empty() || sizes.iter().any(|s| !(*s > 0.0)) || unit_bytes == 0 {
        return Err(CliError::Usage("bench needs positive sizes, trials and unit bytes".into()));
    }
    let scratch = match &work_dir {
        Some(_) => None,
        None => Some(tempfile::tempdir().map_err(internal)?),
    };
    let work_dir = work_dir.unwrap_or_else(|| scratch.as_ref().expect("scratch").path().to_path_buf());
    let report = run_bench(&BenchConfig {
        sizes_mo: sizes,
        trials,
        unit_bytes,
        work_dir,
    })
    .map_err(internal)?;
    print!("{}", report.to_text());
    if let Some(p) = csv {
        output(Some(p))?.write_all(report.to_csv().as_bytes()).map_err(internal)?;
    }
    Ok(())
}

/// Sets the returned flag on Ctrl-C or SIGTERM.
fn stop_on_signal() -> Arc<AtomicBool> {
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build();
        if let Ok(rt) = rt {
            rt.block_on(shutdown_signal());
            flag.store(true, Ordering::Relaxed);
        }
    });
    stop
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("signal handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

fn serve(config: &FileConfig, listen: Option<String>, workers: bool) -> Result<(), CliError> {
    let mut service = config.service()?.clone();
    if let Some(l) = listen {
        service.listen = l;
    }
    let platform = Platform::open(&service, Arc::new(SystemClock)).map_err(data)?;
    let rt = tokio::runtime::Runtime::new().map_err(internal)?;
    let stop = Arc::new(AtomicBool::new(false));
    let handles = if workers || config.workers.in_process {
        platform.spawn_workers(config.processor()?, stop.clone())
    } else {
        Vec::new()
    };
    let served = rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&service.listen).await?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        tracing::info!(%addr, "service started");
        somnoline_service::serve(listener, platform, shutdown_signal()).await
    });
    stop.store(true, Ordering::Relaxed);
    for h in handles {
        let _ = h.join();
    }
    served.map_err(internal)
}

fn worker(config: &FileConfig, kind: WorkerKind, server: Option<String>) -> Result<(), CliError> {
    let server = server
        .or_else(|| config.workers.server.clone())
        .ok_or_else(|| CliError::Usage("no service URL: pass --server or set workers.server".into()))?;
    let secret = config.worker_secret()?;
    let storage = Storage::new(config.worker_storage()?);
    let split_q: Arc<dyn JobQueue> = Arc::new(HttpQueue::new(&server, &secret, JobKind::Split));
    let process_q: Arc<dyn JobQueue> = Arc::new(HttpQueue::new(&server, &secret, JobKind::Process));
    let notifier: Arc<dyn Notifier> = Arc::new(HttpNotifier::new(&server, &secret));

    let mut workers = Vec::new();
    if matches!(kind, WorkerKind::Split | WorkerKind::All) {
        workers.push(Worker::new(
            split_q,
            Arc::new(Splitter {
                storage: storage.clone(),
                process_queue: process_q.clone(),
                notifier: notifier.clone(),
                clock: Arc::new(SystemClock),
                gap_threshold_s: config.workers.gap_s,
                faults: Arc::new(NoFaults),
            }),
        ));
    }
    if matches!(kind, WorkerKind::Process | WorkerKind::All) {
        workers.push(Worker::new(
            process_q,
            Arc::new(Processor {
                storage,
                notifier,
                config: config.processor()?,
                faults: Arc::new(NoFaults),
            }),
        ));
    }
    let stop = stop_on_signal();
    tracing::info!(%server, ?kind, "workers started");
    let handles: Vec<_> = workers
        .into_iter()
        .map(|w| {
            let stop = stop.clone();
            std::thread::spawn(move || {
                w.run(&stop);
            })
        })
        .collect();
    for h in handles {
        h.join().map_err(|_| internal("worker thread panicked"))?;
    }
    Ok(())
}

fn hash_secret(
    username: &str,
    center: &str,
    role: RoleArg,
    secret: Option<String>,
    users_file: Option<&Path>,
) -> Result<(), CliError> {
    let secret = match secret {
        Some(s) => s,
        None => {
            let mut line = String::new();
            io::stdin().read_line(&mut line).map_err(internal)?;
            line.trim_end_matches(['\r', '\n']).to_owned()
        }
    };
    if secret.is_empty() || username.trim().is_empty() || center.trim().is_empty() {
        return Err(CliError::Usage("username, center and secret must be non-empty".into()));
    }
    let role = match role {
        RoleArg::Technologist => Role::Technologist,
        RoleArg::Admin => Role::Admin,
    };
    let user = User::new(username, center, role, &secret);
    match users_file {
        None => println!("{}", serde_json::to_string_pretty(&user).map_err(internal)?),
        Some(path) => {
            let mut users: Vec<User> = match std::fs::read(path) {
                Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?,
                Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
                Err(e) => return Err(internal(e)),
            };
            users.retain(|u| u.username != user.username);
            users.push(user);
            somnoline_service::UserDirectory::save(&users, path).map_err(internal)?;
        }
    }
    Ok(())
}
