use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use onrails::agent::Agent;
use onrails::baselines::{CemPlanner, PrivilegedDriver};
use onrails::bench::{default_routes, run_suite, towns_for, trace_episode, write_report, Density, RouteSet, RouteSpec, RunConfig};
use onrails::ego_model::{fit, BicycleParams, EgoModel, FitConfig};
use onrails::policy::{build_samples, load_policy, save_policy, train, PolicyAgent, PolicyArch, PolicyModel};
use onrails::value::io::LABEL_EXTENSION;
use onrails::value::{frame_values, read_labels, render_value_map, write_labels, ActionGrid, LabelMeta, Labeler, PoseOffset};
use onrails::world::collect::{collect_logs, CollectConfig, DrivingPolicy};
use onrails::world::log::{load_logs, read_index, read_trajectory, save_logs};
use onrails::world::noise::OuConfig;
use onrails::world::towns::town_by_name;
use onrails::world::Command;

#[derive(Parser)]
#[command(name = "onrails", version, about = "Driving on rails: logs, action-value labels, distilled policies and benchmarks")]
struct Cli {
    /// Run configuration file; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Record driving logs.
    Collect {
        #[arg(long, default_value = "town-a")]
        map: String,
        /// autopilot, random or model:<path>
        #[arg(long, default_value = "autopilot")]
        policy: String,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 240)]
        decisions: usize,
        #[arg(long, default_value_t = 6)]
        npcs: usize,
        /// Ornstein-Uhlenbeck steering noise sigma; off when absent.
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the ego forward model to logs.
    FitEgo {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        substeps: Option<u32>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute action-value labels for every log in a directory.
    Label {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long, alias = "ego-params")]
        ego: PathBuf,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
        /// Comma list; "pose" also labels the shifted and rotated pose
        /// replicas. Every speed bin is always labeled.
        #[arg(long, default_value = "speed")]
        augment: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy on labels.
    Distill {
        #[arg(long)]
        labels: PathBuf,
        /// Overrides the log directory recorded with the labels.
        #[arg(long)]
        logs: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Comma list of pose and speed; "none" turns both off.
        #[arg(long)]
        augment: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drive one route and write the per-step trace as JSON lines.
    Drive {
        #[arg(long)]
        agent: String,
        #[arg(long)]
        ego: Option<PathBuf>,
        #[arg(long)]
        routes: Option<PathBuf>,
        #[arg(long, default_value = "town-a")]
        map: String,
        /// Route name; the first route when absent.
        #[arg(long)]
        route: Option<String>,
        #[arg(long, default_value = "empty")]
        density: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the route benchmark.
    Bench {
        #[arg(long)]
        agent: String,
        #[arg(long)]
        ego: Option<PathBuf>,
        /// Route file; the built-in routes of --maps when absent.
        #[arg(long)]
        routes: Option<PathBuf>,
        #[arg(long, default_value = "town-a,town-b")]
        maps: String,
        #[arg(long, default_value = "empty,regular,dense")]
        densities: String,
        /// Seed range `a..b` (exclusive) or a comma list.
        #[arg(long, default_value = "0..3")]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the built-in routes of a town to a file.
    Routes {
        #[arg(long, default_value = "town-a")]
        map: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the value grid of one logged frame as a PNG.
    RenderValues {
        /// Label file; its sidecar names the log and the ego model.
        #[arg(long, conflicts_with_all = ["log", "ego"])]
        labels: Option<PathBuf>,
        #[arg(long, requires = "ego")]
        log: Option<PathBuf>,
        #[arg(long, alias = "ego-params")]
        ego: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long, default_value = "follow-lane")]
        command: String,
        /// Speed bin shown.
        #[arg(long, default_value_t = 2)]
        speed_bin: usize,
        /// Heading bin shown.
        #[arg(long)]
        heading_bin: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    match cli.command {
        Cmd::Collect {
            map,
            policy,
            episodes,
            decisions,
            npcs,
            noise,
            seed,
            out,
        } => {
            let town = town_by_name(&map)?;
            let policy = match policy.as_str() {
                "autopilot" => DrivingPolicy::Autopilot,
                "random" => DrivingPolicy::random(),
                other => match other.strip_prefix("model:") {
                    Some(p) => DrivingPolicy::Agent(Arc::new(model_agent(Path::new(p), &config)?)),
                    None => bail!("unknown policy {other:?}"),
                },
            };
            let cfg = CollectConfig {
                episodes,
                decisions,
                npcs,
                noise: noise.map(|sigma| OuConfig {
                    sigma,
                    ..Default::default()
                }),
                seed,
            };
            let got = collect_logs(Arc::new(town.map), &policy, &cfg)?;
            let paths = save_logs(&out, &got.trajectories)?;
            println!("wrote {} logs to {} ({} spawn retries)", paths.len(), out.display(), got.skipped);
        }
        Cmd::FitEgo {
            logs,
            iterations,
            substeps,
            seed,
            out,
        } => {
            let data = load_logs(&logs)?;
            let mut cfg = FitConfig {
                seed,
                ..Default::default()
            };
            if let Some(i) = iterations {
                cfg.iterations = i;
            }
            if let Some(s) = substeps {
                cfg.substeps = s;
            }
            let (model, report) = fit(&data, &BicycleParams::default(), &cfg)?;
            model.save(&out)?;
            let err: Vec<String> = report.position_error.iter().map(|e| format!("{e:.3}")).collect();
            println!(
                "loss {:.5} after {} iterations in {:.1}s; position error by step: {}",
                report.final_loss,
                report.iterations,
                report.wall_time_s,
                err.join(" ")
            );
        }
        Cmd::Label {
            logs,
            ego,
            horizon,
            gamma,
            augment,
            out,
        } => {
            let (poses, _) = parse_augment(&augment)?;
            if let Some(h) = horizon {
                config.plan.horizon = h;
            }
            if let Some(g) = gamma {
                config.plan.gamma = g;
            }
            let labeler = labeler(&config, EgoModel::load(&ego)?, poses)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let logs = std::fs::canonicalize(&logs).with_context(|| format!("resolving {}", logs.display()))?;
            for (name, _) in read_index(&logs)? {
                let log_path = logs.join(&name);
                let traj = read_trajectory(&log_path)?;
                let town = town_by_name(&traj.map_id)?;
                let t0 = Instant::now();
                let labels = labeler.label_trajectory(&town.map, &traj)?;
                let stem = Path::new(&name).file_stem().unwrap_or_default().to_string_lossy().into_owned();
                let label_path = out.join(format!("{stem}.{LABEL_EXTENSION}"));
                write_labels(&label_path, &labels)?;
                LabelMeta {
                    log: log_path,
                    map_id: traj.map_id.clone(),
                    grid: config.grid,
                    plan: config.plan,
                    reward: config.reward,
                    ego: labeler.model,
                    steer_bins: config.actions.steer,
                    throttle_bins: config.actions.throttle,
                }
                .save(&label_path)?;
                println!("{name}: {} frames in {:.1}s", traj.len(), t0.elapsed().as_secs_f64());
            }
        }
        Cmd::Distill {
            labels,
            logs,
            alpha,
            lr,
            epochs,
            augment,
            seed,
            out,
        } => {
            let mut dc = config.distill;
            dc.seed = seed;
            if let Some(a) = alpha {
                dc.alpha = a;
            }
            if let Some(l) = lr {
                dc.lr = l;
            }
            if let Some(e) = epochs {
                dc.epochs = e;
            }
            if let Some(a) = augment {
                (dc.pose_augmentation, dc.speed_augmentation) = parse_augment(&a)?;
            }
            let mut files: Vec<PathBuf> = std::fs::read_dir(&labels)
                .with_context(|| format!("reading {}", labels.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == LABEL_EXTENSION))
                .collect();
            files.sort();
            if files.is_empty() {
                bail!("no label files in {}", labels.display());
            }
            let mut samples = Vec::new();
            let mut n_v = None;
            for f in &files {
                let meta = LabelMeta::load(f)?;
                let log_path = match &logs {
                    Some(dir) => dir.join(meta.log.file_name().context("label metadata has no log file name")?),
                    None => meta.log_path(f),
                };
                let traj = read_trajectory(&log_path)?;
                let q = read_labels(f)?;
                if *n_v.get_or_insert(q.spec.n_v) != q.spec.n_v {
                    bail!("label files disagree on speed bins");
                }
                let town = town_by_name(&traj.map_id)?;
                samples.extend(build_samples(&town.map, &traj, &q, dc.pose_augmentation)?);
            }
            let arch = PolicyArch {
                speed_bins: n_v.unwrap_or(config.grid.n_v),
                ..Default::default()
            };
            println!("{} samples from {} label files", samples.len(), files.len());
            let (model, report) = train(PolicyModel::new(arch, seed)?, &samples, &dc)?;
            for (e, l) in report.epoch_loss.iter().enumerate() {
                println!("epoch {e}: loss {l:.5}");
            }
            save_policy(&out, &model)?;
            println!("wrote {}", out.display());
        }
        Cmd::Drive {
            agent,
            ego,
            routes,
            map,
            route,
            density,
            seed,
            out,
        } => {
            let routes = match routes {
                Some(p) => RouteSet::load(&p)?.routes,
                None => default_routes(&town_by_name(&map)?),
            };
            let spec = match route {
                Some(name) => routes.iter().find(|r| r.name == name).with_context(|| format!("no route named {name}"))?,
                None => routes.first().context("no routes")?,
            };
            let town = town_by_name(&spec.map)?;
            let agent = make_agent(&agent, ego.as_deref(), &config)?;
            let (result, trace) = trace_episode(&town, spec, agent.as_ref(), parse_density(&density)?, seed, &config.episode)?;
            let mut text = String::new();
            for step in &trace {
                text.push_str(&serde_json::to_string(step)?);
                text.push('\n');
            }
            std::fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
            println!("{}", serde_json::to_string(&result)?);
        }
        Cmd::Bench {
            agent,
            ego,
            routes,
            maps,
            densities,
            seeds,
            out,
        } => {
            let routes: Vec<RouteSpec> = match routes {
                Some(p) => RouteSet::load(&p)?.routes,
                None => {
                    let mut all = Vec::new();
                    for m in maps.split(',').map(str::trim) {
                        all.extend(default_routes(&town_by_name(m)?));
                    }
                    all
                }
            };
            let densities = densities.split(',').map(|d| parse_density(d.trim())).collect::<Result<Vec<_>>>()?;
            let seeds = parse_seeds(&seeds)?;
            let towns = towns_for(&routes)?;
            let agent = make_agent(&agent, ego.as_deref(), &config)?;
            let t0 = Instant::now();
            let results = run_suite(&towns, &routes, agent.as_ref(), &densities, &seeds, &config.episode)?;
            write_report(&out, &results)?;
            std::fs::write(out.join("config.toml"), config.to_toml()).context("writing run config")?;
            print!("{}", onrails::bench::text_report(&results));
            println!("{} episodes in {:.1}s, report in {}", results.len(), t0.elapsed().as_secs_f64(), out.display());
        }
        Cmd::Routes { map, out } => {
            let set = RouteSet {
                routes: default_routes(&town_by_name(&map)?),
            };
            set.save(&out)?;
            println!("wrote {} routes to {}", set.routes.len(), out.display());
        }
        Cmd::RenderValues {
            labels,
            log,
            ego,
            frame,
            command,
            speed_bin,
            heading_bin,
            out,
        } => {
            let cmd = Command::parse(&command).with_context(|| format!("unknown command {command:?}"))?;
            let (log, model) = match (labels, log, ego) {
                (Some(l), _, _) => {
                    let meta = LabelMeta::load(&l)?;
                    config.grid = meta.grid;
                    config.plan = meta.plan;
                    config.reward = meta.reward;
                    (meta.log_path(&l), meta.ego)
                }
                (None, Some(log), Some(ego)) => (log, EgoModel::load(&ego)?),
                _ => bail!("render-values needs --labels, or --log with --ego"),
            };
            let traj = read_trajectory(&log)?;
            let town = town_by_name(&traj.map_id)?;
            let labeler = labeler(&config, model, false)?;
            let grid = frame_values(&labeler, &town.map, &traj, frame, cmd)?;
            let k = heading_bin.unwrap_or(grid.spec.n_theta / 2);
            if k >= grid.spec.n_theta || speed_bin >= grid.spec.n_v {
                bail!("bin out of range for a {}x{} heading/speed grid", grid.spec.n_theta, grid.spec.n_v);
            }
            let plane = onrails::value::ValueGrid {
                values: grid.plane(k, speed_bin).to_vec(),
                spec: onrails::value::GridSpec {
                    n_theta: 1,
                    n_v: 1,
                    ..grid.spec
                },
                ..grid
            };
            render_value_map(&plane, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn labeler(config: &RunConfig, model: EgoModel, poses: bool) -> Result<Labeler> {
    let mut l = Labeler::new(model);
    l.spec = config.grid;
    l.actions = ActionGrid::standard(config.actions.steer, config.actions.throttle)?;
    l.plan = config.plan;
    l.reward = config.reward;
    if poses {
        l.poses = PoseOffset::augmented();
    }
    l.validate()?;
    Ok(l)
}

fn model_agent(path: &Path, config: &RunConfig) -> Result<PolicyAgent> {
    let model = load_policy(path).with_context(|| format!("loading policy {}", path.display()))?;
    let mut agent = PolicyAgent::new(model, config.control);
    agent.label = path.file_stem().map_or("policy".into(), |s| s.to_string_lossy().into_owned());
    Ok(agent)
}

fn make_agent(spec: &str, ego: Option<&Path>, config: &RunConfig) -> Result<Box<dyn Agent>> {
    if let Some(p) = spec.strip_prefix("model:") {
        return Ok(Box::new(model_agent(Path::new(p), config)?));
    }
    let ego = ego.with_context(|| format!("agent {spec} needs --ego"))?;
    let model = EgoModel::load(ego)?;
    match spec {
        "privileged" => Ok(Box::new(PrivilegedDriver::new(labeler(config, model, false)?)?)),
        "cem" => Ok(Box::new(CemPlanner::new(model, config.plan, config.reward, config.cem)?)),
        other => bail!("unknown agent {other:?}; expected model:<path>, privileged or cem"),
    }
}

/// (pose, speed) flags from a list such as "pose,speed" or "none".
fn parse_augment(list: &str) -> Result<(bool, bool)> {
    let set: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty() && *s != "none").collect();
    if let Some(bad) = set.iter().find(|s| !matches!(**s, "pose" | "speed")) {
        bail!("unknown augmentation {bad:?}; expected pose, speed or none");
    }
    Ok((set.contains(&"pose"), set.contains(&"speed")))
}

fn parse_density(s: &str) -> Result<Density> {
    Density::parse(s).with_context(|| format!("unknown density {s:?}; expected empty, regular or dense"))
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().context("bad seed range start")?;
        let b: u64 = b.trim().parse().context("bad seed range end")?;
        if b <= a {
            bail!("empty seed range {s}");
        }
        return Ok((a..b).collect());
    }
    s.split(',').map(|x| x.trim().parse().with_context(|| format!("bad seed {x:?}"))).collect()
}
