use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LANE_WIDTH;
use crate::artifact::sub_seed;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// Stop at a stop line, then take the lane named by the fork target.
    LaneFork,
    /// Pass one to three parked cars blocking lane 0.
    ParkedOvertake,
    /// A pedestrian steps onto the road when the ego gets close.
    EmergencyBrake,
    /// Lane 0 ends; merge into lane 1 through traffic.
    MergeLite,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::LaneFork,
        ScenarioKind::ParkedOvertake,
        ScenarioKind::EmergencyBrake,
        ScenarioKind::MergeLite,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::LaneFork => "lane-fork",
            ScenarioKind::ParkedOvertake => "parked-overtake",
            ScenarioKind::EmergencyBrake => "emergency-brake",
            ScenarioKind::MergeLite => "merge-lite",
        }
    }

    pub fn index(self) -> u32 {
        match self {
            ScenarioKind::LaneFork => 0,
            ScenarioKind::ParkedOvertake => 1,
            ScenarioKind::EmergencyBrake => 2,
            ScenarioKind::MergeLite => 3,
        }
    }

    pub fn from_index(i: u32) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown scenario kind `{s}`")))
    }
}

/// Placement of the straight route reference line in the world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteFrame {
    pub origin: [f64; 2],
    pub heading: f64,
}

impl RouteFrame {
    pub fn to_world(&self, s: f64, d: f64) -> [f64; 2] {
        let (sn, cs) = self.heading.sin_cos();
        [self.origin[0] + cs * s - sn * d, self.origin[1] + sn * s + cs * d]
    }

    pub fn to_route(&self, p: [f64; 2]) -> (f64, f64) {
        let (sn, cs) = self.heading.sin_cos();
        let (dx, dy) = (p[0] - self.origin[0], p[1] - self.origin[1]);
        (cs * dx + sn * dy, -sn * dx + cs * dy)
    }

    /// World-frame velocity of a route-frame velocity `(vs, vd)`.
    pub fn velocity_to_world(&self, vs: f64, vd: f64) -> [f64; 2] {
        let (sn, cs) = self.heading.sin_cos();
        [cs * vs - sn * vd, sn * vs + cs * vd]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentKind {
    Vehicle,
    Pedestrian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Motion {
    Static,
    /// Constant speed along the route.
    Cruise {
        speed: f64,
    },
    /// Waits until the ego centre is within `trigger_gap` behind it, then walks to
    /// `d_end` at `speed` and stops.
    Crossing {
        trigger_gap: f64,
        speed: f64,
        d_end: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub kind: AgentKind,
    pub s: f64,
    pub d: f64,
    pub motion: Motion,
}

/// A point the ego must pass within the lateral tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub s: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub frame: RouteFrame,
    /// Lane 0 centreline in world coordinates, one vertex every 10 m.
    pub route: Vec<[f64; 2]>,
    pub route_length: f64,
    pub cruise_speed: f64,
    pub max_ticks: usize,
    /// Lane 0 is closed beyond this `s`.
    pub lane0_end: Option<f64>,
    pub stop_line: Option<f64>,
    /// Ordered by `s`; the last one sits at the route end.
    pub targets: Vec<Target>,
    pub agents: Vec<AgentSpec>,
    pub ego_d: f64,
    pub ego_heading_error: f64,
    pub ego_speed: f64,
}

/// Declarative scenario suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub kinds: Vec<ScenarioKind>,
    pub seed_start: u64,
    pub seed_count: u64,
    pub route_length: f64,
    pub cruise_speed: f64,
    /// Episode time limit in seconds.
    pub max_time: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            kinds: ScenarioKind::ALL.to_vec(),
            seed_start: 1000,
            seed_count: 20,
            route_length: 150.0,
            cruise_speed: 8.0,
            max_time: 40.0,
        }
    }
}

impl SuiteConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("suite config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() || self.seed_count == 0 {
            return Err(Error::Empty("scenario suite".into()));
        }
        if !(self.route_length >= 100.0 && self.cruise_speed > 0.0 && self.max_time > 0.0) {
            return Err(Error::Config(
                "suite needs route_length >= 100 m and positive cruise_speed and max_time".into(),
            ));
        }
        Ok(())
    }

    /// Every (kind, seed) scenario, ordered by kind then seed.
    pub fn scenarios(&self) -> Result<Vec<Scenario>> {
        self.validate()?;
        let mut kinds = self.kinds.clone();
        kinds.sort();
        kinds.dedup();
        let mut out = Vec::new();
        for k in kinds {
            for seed in self.seed_start..self.seed_start + self.seed_count {
                out.push(Scenario::generate(k, seed, self)?);
            }
        }
        Ok(out)
    }
}

impl Scenario {
    /// Builds the scenario of `kind` for `seed`; equal inputs give equal scenarios.
    pub fn generate(kind: ScenarioKind, seed: u64, suite: &SuiteConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, kind.as_str()));
        let len = suite.route_length;
        let frame = RouteFrame {
            origin: [rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0)],
            heading: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        };
        let route = (0..=(len / 10.0).ceil() as usize)
            .map(|i| frame.to_world((i as f64 * 10.0).min(len), 0.0))
            .collect();
        let mut sc = Scenario {
            kind,
            seed,
            frame,
            route,
            route_length: len,
            cruise_speed: suite.cruise_speed,
            max_ticks: (suite.max_time / super::DT).round() as usize,
            lane0_end: None,
            stop_line: None,
            targets: Vec::new(),
            agents: Vec::new(),
            ego_d: rng.random_range(-0.3..0.3),
            ego_heading_error: rng.random_range(-0.03..0.03),
            ego_speed: rng.random_range(0.0..1.0) * suite.cruise_speed,
        };
        match kind {
            ScenarioKind::LaneFork => {
                sc.stop_line = Some(rng.random_range(30.0..50.0));
                let fork = rng.random_range(0.55..0.75) * len;
                let lane = if rng.random_bool(0.5) { LANE_WIDTH } else { 0.0 };
                sc.targets = vec![Target { s: fork, d: lane }, Target { s: len, d: lane }];
            }
            ScenarioKind::ParkedOvertake => {
                let n = rng.random_range(1..=3);
                let mut s = rng.random_range(30.0..45.0);
                for _ in 0..n {
                    sc.agents.push(AgentSpec {
                        kind: AgentKind::Vehicle,
                        s,
                        d: rng.random_range(-0.2..0.2),
                        motion: Motion::Static,
                    });
                    s += rng.random_range(30.0..40.0);
                }
                sc.targets = vec![Target { s: len, d: 0.0 }];
            }
            ScenarioKind::EmergencyBrake => {
                sc.agents.push(AgentSpec {
                    kind: AgentKind::Pedestrian,
                    s: rng.random_range(0.35..0.6) * len,
                    d: -4.0,
                    motion: Motion::Crossing {
                        trigger_gap: rng.random_range(20.0..30.0),
                        speed: rng.random_range(1.2..1.8),
                        d_end: LANE_WIDTH + 3.0,
                    },
                });
                sc.targets = vec![Target { s: len, d: 0.0 }];
            }
            ScenarioKind::MergeLite => {
                let end = rng.random_range(0.4..0.6) * len;
                sc.lane0_end = Some(end);
                let n = rng.random_range(1..=2);
                let speed = rng.random_range(0.75..1.0) * suite.cruise_speed;
                let mut s = rng.random_range(-15.0..25.0);
                for _ in 0..n {
                    sc.agents.push(AgentSpec {
                        kind: AgentKind::Vehicle,
                        s,
                        d: LANE_WIDTH,
                        motion: Motion::Cruise { speed },
                    });
                    s += rng.random_range(-35.0..-25.0);
                }
                sc.targets = vec![Target { s: end, d: LANE_WIDTH }, Target { s: len, d: LANE_WIDTH }];
            }
        }
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() || self.targets.windows(2).any(|w| w[1].s < w[0].s) {
            return Err(Error::Config("targets must be non-empty and ordered by s".into()));
        }
        for a in &self.agents {
            if a.s.abs() < 8.0 && (a.d - self.ego_d).abs() < 2.5 {
                return Err(Error::Config(format!(
                    "agent at ({}, {}) overlaps the ego start",
                    a.s, a.d
                )));
            }
        }
        Ok(())
    }

    /// Lateral range of open lane centres at `s`.
    pub fn open_lanes(&self, s: f64) -> (f64, f64) {
        match self.lane0_end {
            Some(end) if s > end => (LANE_WIDTH, LANE_WIDTH),
            _ => (0.0, LANE_WIDTH),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let suite = SuiteConfig::default();
        for k in ScenarioKind::ALL {
            let a = Scenario::generate(k, 7, &suite).unwrap();
            assert_eq!(a, Scenario::generate(k, 7, &suite).unwrap());
            assert_ne!(a, Scenario::generate(k, 8, &suite).unwrap());
            assert_eq!(a.targets.last().unwrap().s, 150.0);
        }
    }

    #[test]
    fn route_frame_round_trip() {
        let f = RouteFrame {
            origin: [3.0, -2.0],
            heading: 2.1,
        };
        let p = f.to_world(12.5, -1.75);
        let (s, d) = f.to_route(p);
        assert!((s - 12.5).abs() < 1e-12 && (d + 1.75).abs() < 1e-12);
    }

    #[test]
    fn suite_toml_round_trip_and_count() {
        let suite = SuiteConfig::default();
        let back = SuiteConfig::from_toml(&suite.to_toml()).unwrap();
        assert_eq!(back, suite);
        assert_eq!(back.scenarios().unwrap().len(), 80);
        let text = "kinds = [\"merge-lite\", \"lane-fork\"]\nseed_start = 3\nseed_count = 2\n";
        let s = SuiteConfig::from_toml(text).unwrap();
        let sc = s.scenarios().unwrap();
        assert_eq!(sc.len(), 4);
        assert_eq!((sc[0].kind, sc[0].seed), (ScenarioKind::LaneFork, 3));
        assert!(SuiteConfig::from_toml("kinds = []").is_err());
        assert!(SuiteConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn routes_are_simple_and_about_150_m() {
        let suite = SuiteConfig::default();
        for k in ScenarioKind::ALL {
            for seed in 0..20 {
                let sc = Scenario::generate(k, seed, &suite).unwrap();
                let len: f64 = sc
                    .route
                    .windows(2)
                    .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
                    .sum();
                assert!((len - 150.0).abs() < 1e-9);
            }
        }
    }
}
