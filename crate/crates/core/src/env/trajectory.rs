use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{AgentState, EvaderState};
use crate::Result;

/// One line of a trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrajectoryRecord {
    Agent {
        t: usize,
        agent_id: usize,
        x: f64,
        y: f64,
        phi: f64,
        v: f64,
        omega: f64,
        reward: f64,
        done: bool,
    },
    Evader {
        t: usize,
        evader_id: usize,
        x: f64,
        y: f64,
        caught: bool,
    },
}

/// Line-delimited JSON writer, one record per agent and evader per step.
pub struct TrajectoryWriter<W: Write> {
    out: W,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(out: W) -> Self {
        TrajectoryWriter { out }
    }

    pub fn write_record(&mut self, record: &TrajectoryRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn write_step(
        &mut self,
        t: usize,
        states: &[AgentState],
        evaders: &[EvaderState],
        reward: f64,
        done: bool,
        caught: &[bool],
    ) -> Result<()> {
        for (agent_id, s) in states.iter().enumerate() {
            self.write_record(&TrajectoryRecord::Agent {
                t,
                agent_id,
                x: s.x,
                y: s.y,
                phi: s.phi,
                v: s.v,
                omega: s.omega,
                reward,
                done,
            })?;
        }
        for (evader_id, e) in evaders.iter().enumerate() {
            self.write_record(&TrajectoryRecord::Evader {
                t,
                evader_id,
                x: e.x,
                y: e.y,
                caught: caught.get(evader_id).copied().unwrap_or(false),
            })?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn read_trajectory<R: BufRead>(input: R) -> Result<Vec<TrajectoryRecord>> {
    let mut records = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut w = TrajectoryWriter::new(Vec::new());
        let states = [AgentState::at(1.0, 2.0, 0.5), AgentState::at(3.0, 4.0, 1.5)];
        let evaders = [EvaderState { x: 7.0, y: 8.0 }];
        w.write_step(0, &states, &evaders, -0.25, false, &[false]).unwrap();
        w.write_step(1, &states, &evaders, -0.125, true, &[true]).unwrap();
        let bytes = w.into_inner();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.lines().next().unwrap().contains("\"agent_id\":0"));
        let back = read_trajectory(&bytes[..]).unwrap();
        assert_eq!(back.len(), 6);
        assert_eq!(
            back[5],
            TrajectoryRecord::Evader { t: 1, evader_id: 0, x: 7.0, y: 8.0, caught: true }
        );
        match &back[3] {
            TrajectoryRecord::Agent { t, agent_id, reward, done, .. } => {
                assert_eq!((*t, *agent_id, *reward, *done), (1, 0, -0.125, true));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
