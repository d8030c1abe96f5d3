//! Per-step episode log written as CSV.

use std::io::Write;

use crate::gaitgen::LegId;
use crate::policy::CHANNELS;

use super::StepOutcome;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRow {
    pub step: usize,
    pub time: f64,
    pub torso: [f64; 3],
    pub plane_roll: f64,
    pub plane_pitch: f64,
    pub height: f64,
    pub dx: f64,
    pub reward: f64,
    pub push_active: bool,
    /// Per leg `[SL, SA, Xs, Ys, Zs]` in leg order.
    pub actions: [f64; 20],
}

impl From<&StepOutcome> for EpisodeRow {
    fn from(o: &StepOutcome) -> Self {
        Self {
            step: o.info.step,
            time: o.info.time,
            torso: o.info.torso,
            plane_roll: o.info.plane.roll,
            plane_pitch: o.info.plane.pitch,
            height: o.info.height,
            dx: o.info.dx,
            reward: o.reward,
            push_active: o.info.push_active,
            actions: o.info.actions.to_array(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeLog {
    pub rows: Vec<EpisodeRow>,
}

impl EpisodeLog {
    pub fn push(&mut self, outcome: &StepOutcome) {
        self.rows.push(EpisodeRow::from(outcome));
    }

    pub fn total_reward(&self) -> f64 {
        self.rows.iter().map(|r| r.reward).sum()
    }

    pub fn columns() -> Vec<String> {
        let mut cols: Vec<String> = [
            "step",
            "time",
            "torso_roll",
            "torso_pitch",
            "torso_yaw",
            "plane_roll",
            "plane_pitch",
            "height",
            "dx",
            "reward",
            "push",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for leg in LegId::ALL {
            cols.extend(CHANNELS.iter().map(|c| format!("{leg}_{c}")));
        }
        cols
    }

    /// Writes `# ` prefixed header lines followed by the CSV table.
    pub fn write_csv<W: Write>(&self, mut out: W, header: &[String]) -> std::io::Result<()> {
        for line in header {
            writeln!(out, "# {line}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::columns())?;
        for r in &self.rows {
            let mut rec = vec![r.step.to_string(), r.time.to_string()];
            rec.extend(r.torso.iter().map(|v| v.to_string()));
            rec.extend([r.plane_roll, r.plane_pitch, r.height, r.dx, r.reward].iter().map(|v| v.to_string()));
            rec.push(u8::from(r.push_active).to_string());
            rec.extend(r.actions.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()
    }
}
