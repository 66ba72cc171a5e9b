//! Line-oriented trajectory dumps.
//!
//! One record per step:
//! `env,t,obs0..obs{d-1},action,logp,reward,done,tag`, preceded by a header
//! row naming every column. Floats are written in shortest round-trip form,
//! so loading reproduces the stored records bit for bit. A new trajectory
//! starts whenever `t` returns to 0. Derived fields (advantages, value
//! targets, bootstrap values) are not stored; recompute them after loading.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::outliers::OutlierSpec;
use crate::toyrl::rollout::{StepRecord, Trajectory};

fn tag_str(tag: &Option<OutlierSpec>) -> String {
    match tag {
        None => "clean".to_string(),
        Some(spec) => spec.to_string(),
    }
}

fn parse_tag(s: &str) -> Result<Option<OutlierSpec>> {
    if s == "clean" {
        Ok(None)
    } else {
        Ok(Some(s.parse()?))
    }
}

pub fn dump_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let first = trajectories
        .iter()
        .flat_map(|t| t.steps.first())
        .next()
        .ok_or(Error::EmptySample)?;
    let d = first.obs.len();
    let mut text = String::from("env,t");
    for j in 0..d {
        write!(text, ",obs{j}").unwrap();
    }
    text.push_str(",action,logp,reward,done,tag\n");
    for tr in trajectories {
        for (t, step) in tr.steps.iter().enumerate() {
            if step.obs.len() != d {
                return Err(Error::DimMismatch { expected: d, got: step.obs.len() });
            }
            write!(text, "{},{}", tr.env_index, t).unwrap();
            for v in &step.obs {
                write!(text, ",{v}").unwrap();
            }
            writeln!(
                text,
                ",{},{},{},{},{}",
                step.action,
                step.logp,
                step.reward,
                u8::from(step.done),
                tag_str(&tr.tag)
            )
            .unwrap();
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let text = std::fs::read_to_string(path)?;
    let err = |line: usize, detail: String| Error::Parse {
        path: path.display().to_string(),
        detail: format!("line {}: {detail}", line + 1),
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(0, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 8 || cols[0] != "env" || cols[1] != "t" || cols[cols.len() - 1] != "tag" {
        return Err(err(0, "unrecognized header".into()));
    }
    let d = cols.len() - 7;
    let mut out: Vec<Trajectory> = Vec::new();
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(err(
                lineno,
                format!("expected {} fields, found {}", cols.len(), fields.len()),
            ));
        }
        let mut idx = 0;
        let mut next = || {
            let f = fields[idx];
            idx += 1;
            f
        };
        let env_index: usize =
            next().parse().map_err(|_| err(lineno, "bad env index".into()))?;
        let t: usize = next().parse().map_err(|_| err(lineno, "bad step index".into()))?;
        let mut obs = Vec::with_capacity(d);
        for j in 0..d {
            obs.push(
                next()
                    .parse::<f64>()
                    .map_err(|_| err(lineno, format!("bad obs{j} value")))?,
            );
        }
        let action: usize = next().parse().map_err(|_| err(lineno, "bad action".into()))?;
        let logp: f64 = next().parse().map_err(|_| err(lineno, "bad logp".into()))?;
        let reward: f64 = next().parse().map_err(|_| err(lineno, "bad reward".into()))?;
        let done = match next() {
            "0" => false,
            "1" => true,
            other => return Err(err(lineno, format!("bad done flag '{other}'"))),
        };
        let tag = parse_tag(next()).map_err(|e| err(lineno, e.to_string()))?;
        let record = StepRecord { obs, action, logp, reward, value: 0.0, done };
        let start_new = t == 0;
        if start_new {
            out.push(Trajectory {
                env_index,
                tag,
                steps: Vec::new(),
                final_value: 0.0,
                advantages: Vec::new(),
                returns: Vec::new(),
                completed_returns: Vec::new(),
            });
        }
        let current = out
            .last_mut()
            .ok_or_else(|| err(lineno, "first record must have t = 0".into()))?;
        if current.steps.len() != t {
            return Err(err(
                lineno,
                format!("step index {t} does not follow {}", current.steps.len()),
            ));
        }
        if current.env_index != env_index {
            return Err(err(lineno, "env index changed mid-trajectory".into()));
        }
        if current.tag != tag {
            return Err(err(lineno, "tag changed mid-trajectory".into()));
        }
        current.steps.push(record);
    }
    if out.is_empty() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            detail: "no records".into(),
        });
    }
    Ok(out)
}
