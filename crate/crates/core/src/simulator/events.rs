use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;

const COVID: &str = include_str!("../../assets/events/covid.csv");
const RU_UA: &str = include_str!("../../assets/events/ru_ua.csv");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub step: usize,
    pub date: String,
    pub text: String,
}

/// Key events by simulation step, one file row per event.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventSchedule {
    pub events: Vec<Event>,
}

impl EventSchedule {
    /// Parses `step,date,text` CSV; steps must strictly increase.
    pub fn from_csv(text: &str, path: &str) -> Result<Self, SimError> {
        let mut events: Vec<Event> = Vec::new();
        for (i, row) in csv::Reader::from_reader(text.as_bytes()).deserialize::<Event>().enumerate() {
            let line = i + 2;
            let ev = row.map_err(|e| SimError::Parse {
                path: path.to_string(),
                line,
                message: e.to_string(),
            })?;
            if events.last().is_some_and(|p| p.step >= ev.step) {
                return Err(SimError::Parse {
                    path: path.to_string(),
                    line,
                    message: format!("step {} does not increase", ev.step),
                });
            }
            events.push(ev);
        }
        Ok(Self { events })
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_csv(&text, &path.display().to_string())
    }

    /// Monthly pandemic milestones, 2020/01 to 2022/03.
    pub fn covid() -> Self {
        Self::from_csv(COVID, "covid.csv").expect("bundled schedule parses")
    }

    /// Daily conflict events, 13 February to 2 March 2022.
    pub fn ru_ua() -> Self {
        Self::from_csv(RU_UA, "ru_ua.csv").expect("bundled schedule parses")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "covid" => Some(Self::covid()),
            "ru_ua" | "ru-ua" => Some(Self::ru_ua()),
            _ => None,
        }
    }

    pub fn horizon(&self) -> usize {
        self.events.len()
    }

    pub fn at(&self, step: usize) -> Option<&Event> {
        self.events.iter().find(|e| e.step == step)
    }

    /// The last `count` events strictly before `step`, oldest first.
    pub fn past(&self, step: usize, count: usize) -> Vec<&Event> {
        let before: Vec<&Event> = self.events.iter().filter(|e| e.step < step).collect();
        before[before.len().saturating_sub(count)..].to_vec()
    }
}
