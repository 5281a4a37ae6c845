//! Experiment commands behind the `shadowtutor` binary.

mod config;

pub use config::{BoundsProfile, ConfigError, Distillation, ExperimentConfig, Mode, TeacherKind};

use std::fs;
use std::io::Write as _;
use std::net::{SocketAddr, TcpListener, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::analytics::{self, AnalyticsError, Bounds, LatencyProfile, Report};
use crate::model::{
    pretrain_student, ArchDescriptor, Checkpoint, CheckpointError, ModelError, NetTeacher, OracleTeacher,
    PretrainReport, StudentModel, Teacher, DISTILL_LR,
};
use crate::netsim::{run_sim, run_socket, serve, RunOutcome, Scenario};
use crate::protocol::{ProtocolError, Server, Strategy};
use crate::videogen::{generate, read_stream, resample_fps, scene_corpus, write_stream, LabeledStream, VideoError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Files staged under temporary names and renamed together on commit.
/// Dropping an uncommitted set removes everything staged.
pub struct Outputs {
    dir: PathBuf,
    staged: Vec<(PathBuf, PathBuf)>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|source| CliError::File { path: dir.into(), source })?;
        Ok(Self { dir: dir.into(), staged: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let fin = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, bytes).map_err(|source| CliError::File { path: tmp.clone(), source })?;
        self.staged.push((tmp, fin.clone()));
        Ok(fin)
    }

    pub fn commit(mut self) -> Result<Vec<PathBuf>> {
        let staged = std::mem::take(&mut self.staged);
        let mut done = Vec::with_capacity(staged.len());
        for (i, (tmp, fin)) in staged.iter().enumerate() {
            if let Err(source) = fs::rename(tmp, fin) {
                for p in &done {
                    let _ = fs::remove_file(p);
                }
                for (t, _) in &staged[i..] {
                    let _ = fs::remove_file(t);
                }
                return Err(CliError::File { path: fin.clone(), source });
            }
            done.push(fin.clone());
        }
        Ok(done)
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        for (tmp, _) in &self.staged {
            let _ = fs::remove_file(tmp);
        }
    }
}

/// The stream named by the config, generated unless a file is given.
pub fn load_stream(cfg: &ExperimentConfig) -> Result<LabeledStream> {
    let stream = match &cfg.stream {
        Some(p) => {
            let f = fs::File::open(p).map_err(|source| CliError::File { path: p.clone(), source })?;
            read_stream(std::io::BufReader::new(f))?
        }
        None => generate(&cfg.scene, cfg.frames)?,
    };
    if stream.fps != cfg.fps {
        return Ok(resample_fps(&stream, stream.fps, cfg.fps)?);
    }
    Ok(stream)
}

pub fn pretrained_student(cfg: &ExperimentConfig) -> Result<(StudentModel, PretrainReport)> {
    let classes = cfg.scene.classes as u16;
    let mut student = StudentModel::build(ArchDescriptor::desk_student(classes), cfg.student_seed)?;
    let corpus = scene_corpus(cfg.scene.height, cfg.scene.width, cfg.scene.classes, cfg.pretrain_scenes, cfg.pretrain_seed)?;
    let (_, report) = pretrain_student(&mut student, &corpus, cfg.pretrain_epochs, cfg.pretrain_lr, cfg.pretrain_seed)?;
    log::info!("pre-trained student: train mIoU {:.3} -> {:.3}", report.initial_miou, report.final_miou);
    Ok((student, report))
}

/// Starting student for a run: the configured checkpoint, or a freshly
/// pre-trained one, with the configured distillation mode.
pub fn starting_student(cfg: &ExperimentConfig) -> Result<StudentModel> {
    let mut student = match &cfg.checkpoint {
        Some(p) => Checkpoint::read_file(p)?.load()?,
        None => pretrained_student(cfg)?.0,
    };
    if cfg.distillation == Distillation::Full {
        student.set_freeze_boundary(0, DISTILL_LR)?;
    }
    Ok(student)
}

pub fn build_scenario(cfg: &ExperimentConfig, stream: Arc<LabeledStream>, student: StudentModel) -> Result<Scenario> {
    let teacher = match cfg.teacher {
        TeacherKind::Oracle => Teacher::Oracle(OracleTeacher::new(
            Arc::new(stream.labels.clone()),
            stream.classes,
            cfg.teacher_noise,
            cfg.teacher_seed,
        )),
        TeacherKind::Net => Teacher::Net(NetTeacher::desk(stream.classes as u16, cfg.teacher_seed)?),
    };
    Ok(Scenario {
        name: cfg.scenario.clone(),
        stream,
        student,
        teacher,
        params: cfg.algo,
        strategy: cfg.strategy,
        channel: cfg.channel,
        latency: cfg.latency,
    })
}

fn execute(cfg: &ExperimentConfig, scenario: &Scenario) -> Result<RunOutcome> {
    Ok(match cfg.mode {
        Mode::Sim => run_sim(scenario)?,
        Mode::Socket => {
            let addr = match &cfg.addr {
                Some(a) => Some(resolve(a)?),
                None => None,
            };
            run_socket(scenario, addr)?
        }
    })
}

fn resolve(addr: &str) -> Result<SocketAddr> {
    addr.to_socket_addrs()?
        .next()
        .ok_or_else(|| CliError::Usage(format!("cannot resolve {addr}")))
}

fn sim_bounds(cfg: &ExperimentConfig, scenario: &Scenario) -> Option<Bounds> {
    (cfg.mode == Mode::Sim && scenario.strategy != Strategy::Naive).then(|| Bounds::of(&scenario.profile(), &cfg.algo))
}

fn report_files(out: &mut Outputs, stem: &str, reports: &[Report]) -> Result<()> {
    let mut json = Vec::new();
    analytics::write_json(reports, &mut json)?;
    out.write(&format!("{stem}.json"), &json)?;
    let mut csv = Vec::new();
    analytics::write_csv(reports, &mut csv)?;
    out.write(&format!("{stem}.csv"), &csv)?;
    Ok(())
}

pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let stream = generate(&cfg.scene, cfg.frames)?;
    let stream = if cfg.fps != stream.fps { resample_fps(&stream, stream.fps, cfg.fps)? } else { stream };
    let mut bytes = Vec::new();
    write_stream(&stream, &mut bytes)?;
    let mut out = Outputs::new(&cfg.output)?;
    out.write(&format!("{}.svid", cfg.scenario), &bytes)?;
    out.commit()
}

pub fn cmd_pretrain(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let (student, report) = pretrained_student(cfg)?;
    let mut out = Outputs::new(&cfg.output)?;
    out.write("student.ckpt", Checkpoint::of(&student).bytes())?;
    out.write("pretrain.json", &serde_json::to_vec_pretty(&report)?)?;
    out.commit()
}

/// One run; writes the report (JSON and CSV) and the per-frame mIoU trace.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<(Report, Vec<PathBuf>)> {
    cfg.validate()?;
    let stream = Arc::new(load_stream(cfg)?);
    let scenario = build_scenario(cfg, stream, starting_student(cfg)?)?;
    let outcome = execute(cfg, &scenario)?;
    let report = analytics::aggregate(&outcome.stats, sim_bounds(cfg, &scenario))?;
    let mut out = Outputs::new(&cfg.output)?;
    report_files(&mut out, &cfg.scenario, std::slice::from_ref(&report))?;
    let mut trace = String::from("frame,miou\n");
    for (i, m) in outcome.stats.frame_miou.iter().enumerate() {
        trace.push_str(&format!("{i},{m}\n"));
    }
    out.write(&format!("{}_trace.csv", cfg.scenario), trace.as_bytes())?;
    out.write(&format!("{}_stats.json", cfg.scenario), &serde_json::to_vec_pretty(&outcome.stats)?)?;
    Ok((report, out.commit()?))
}

/// Closed-form bounds for the config, as printable text.
pub fn cmd_bounds(cfg: &ExperimentConfig) -> Result<String> {
    cfg.validate()?;
    let profile = match cfg.bounds_profile {
        BoundsProfile::Reference => LatencyProfile::reference(),
        BoundsProfile::Scenario => {
            let student = StudentModel::build(ArchDescriptor::desk_student(cfg.scene.classes as u16), 0)?;
            let student = if cfg.distillation == Distillation::Full {
                let mut s = student;
                s.set_freeze_boundary(0, DISTILL_LR)?;
                s
            } else {
                student
            };
            let (key, update) = crate::netsim::message_sizes(&student, cfg.scene.height, cfg.scene.width, 3);
            crate::netsim::sim_profile(&cfg.latency, &cfg.channel, key, update)
        }
    };
    let b = Bounds::of(&profile, &cfg.algo);
    let mut s = String::new();
    use std::fmt::Write as _;
    let w = &mut s;
    let _ = writeln!(
        w,
        "profile: t_si={} t_sd={} t_ti={} t_net={:.6} s_net={} bytes",
        profile.t_si, profile.t_sd, profile.t_ti, profile.t_net, profile.s_net
    );
    let _ = writeln!(w, "t_c:        [{:.4}, {:.4}] s", b.t_c.0, b.t_c.1);
    let _ = writeln!(
        w,
        "traffic:    [{:.3}, {:.3}] Mbps",
        b.traffic_bps.0 / analytics::MEGA,
        b.traffic_bps.1 / analytics::MEGA
    );
    let _ = writeln!(w, "throughput: [{:.3}, {:.3}] FPS", b.throughput_fps.0, b.throughput_fps.1);
    Ok(s)
}

/// One simulated run per bandwidth for the configured strategy and for the
/// naive baseline; writes `sweep.csv` and `sweep.json`.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<(Vec<Report>, Vec<PathBuf>)> {
    cfg.validate()?;
    let reports = sweep_reports(cfg)?;
    let mut out = Outputs::new(&cfg.output)?;
    report_files(&mut out, "sweep", &reports)?;
    Ok((reports, out.commit()?))
}

/// Sweep runs without writing anything; the strategy's reports come first,
/// then the baseline's, each in bandwidth order.
pub fn sweep_reports(cfg: &ExperimentConfig) -> Result<Vec<Report>> {
    let stream = Arc::new(load_stream(cfg)?);
    let student = starting_student(cfg)?;
    let mut reports = Vec::new();
    for strategy in [cfg.strategy, Strategy::Naive] {
        for &mbps in &cfg.sweep_mbps {
            let mut c = cfg.clone();
            c.mode = Mode::Sim;
            c.strategy = strategy;
            c.channel.uplink_bps = mbps * 1e6;
            c.channel.downlink_bps = mbps * 1e6;
            c.scenario = format!("{}-{strategy}@{mbps}Mbps", cfg.scenario);
            let scenario = build_scenario(&c, stream.clone(), student.clone())?;
            let outcome = run_sim(&scenario)?;
            reports.push(analytics::aggregate(&outcome.stats, sim_bounds(&c, &scenario))?);
        }
    }
    Ok(reports)
}

/// Serves one client connection on `addr` for the configured stream.
pub fn cmd_serve(cfg: &ExperimentConfig, addr: &str) -> Result<()> {
    cfg.validate()?;
    let stream = Arc::new(load_stream(cfg)?);
    let scenario = build_scenario(cfg, stream, starting_student(cfg)?)?;
    let listener = TcpListener::bind(addr)?;
    eprintln!("listening on {}", listener.local_addr()?);
    let mut server = Server::new(scenario.teacher, scenario.student, scenario.params);
    serve(&listener, &mut server)?;
    let steps: usize = server.log().iter().map(|e| e.steps).sum();
    let _ = writeln!(std::io::stderr(), "served {} requests, {steps} distillation steps", server.log().len());
    Ok(())
}
