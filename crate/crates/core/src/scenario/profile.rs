use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::grid::BusId;

use super::ScenarioError;

/// Minute-resolution loads per bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    minutes: Vec<u32>,
    buses: Vec<BusId>,
    /// `loads[bus][step]`, kW.
    loads: Vec<Vec<f64>>,
}

impl LoadProfile {
    pub fn new(minutes: Vec<u32>, buses: Vec<BusId>, loads: Vec<Vec<f64>>) -> Result<Self, ScenarioError> {
        let bad = |m: String| Err(ScenarioError::InvalidProfile(m));
        if minutes.is_empty() {
            return bad("profile has no time steps".into());
        }
        if minutes.windows(2).any(|w| w[0] >= w[1]) {
            return bad("minutes must be strictly increasing".into());
        }
        if buses.len() != loads.len() {
            return bad(format!("{} buses but {} load series", buses.len(), loads.len()));
        }
        let mut seen = std::collections::HashSet::new();
        for (bus, series) in buses.iter().zip(&loads) {
            if !seen.insert(bus) {
                return bad(format!("bus {bus} appears twice"));
            }
            if series.len() != minutes.len() {
                return bad(format!("bus {bus} has {} values, expected {}", series.len(), minutes.len()));
            }
            if let Some(v) = series.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                return bad(format!("bus {bus} has invalid load {v}"));
            }
        }
        Ok(LoadProfile { minutes, buses, loads })
    }

    /// A single step holding the given loads.
    pub fn constant(loads: &HashMap<BusId, f64>) -> Result<Self, ScenarioError> {
        let mut buses: Vec<BusId> = loads.keys().cloned().collect();
        buses.sort();
        let series = buses.iter().map(|b| vec![loads[b]]).collect();
        LoadProfile::new(vec![0], buses, series)
    }

    pub fn len(&self) -> usize {
        self.minutes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minutes.is_empty()
    }

    pub fn minutes(&self) -> &[u32] {
        &self.minutes
    }

    pub fn minute(&self, step: usize) -> u32 {
        self.minutes[step]
    }

    pub fn buses(&self) -> &[BusId] {
        &self.buses
    }

    pub fn series(&self, bus: usize) -> &[f64] {
        &self.loads[bus]
    }

    pub fn loads_at(&self, step: usize) -> HashMap<BusId, f64> {
        self.buses.iter().zip(&self.loads).map(|(b, s)| (b.clone(), s[step])).collect()
    }

    pub fn total_at(&self, step: usize) -> f64 {
        self.loads.iter().map(|s| s[step]).sum()
    }

    /// Step with the largest aggregate load (first one on ties).
    pub fn peak_step(&self) -> usize {
        (0..self.len()).fold(0, |best, t| if self.total_at(t) > self.total_at(best) { t } else { best })
    }

    /// Step index holding `minute`, if any.
    pub fn step_of(&self, minute: u32) -> Option<usize> {
        self.minutes.binary_search(&minute).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_or_negative_series() {
        let b = vec![BusId::from("1")];
        assert!(LoadProfile::new(vec![0, 1], b.clone(), vec![vec![1.0]]).is_err());
        assert!(LoadProfile::new(vec![0], b.clone(), vec![vec![-1.0]]).is_err());
        assert!(LoadProfile::new(vec![1, 0], b.clone(), vec![vec![1.0, 1.0]]).is_err());
        assert!(LoadProfile::new(vec![], b, vec![vec![]]).is_err());
    }

    #[test]
    fn peak_and_lookup() {
        let p = LoadProfile::new(
            vec![0, 1, 2],
            vec!["a".into(), "b".into()],
            vec![vec![1.0, 3.0, 2.0], vec![1.0, 1.0, 1.5]],
        )
        .unwrap();
        assert_eq!(p.peak_step(), 1);
        assert_eq!(p.total_at(2), 3.5);
        assert_eq!(p.step_of(2), Some(2));
        assert_eq!(p.loads_at(0)[&BusId::from("b")], 1.0);
    }
}
