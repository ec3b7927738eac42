use rand::seq::SliceRandom;

use super::scenario::{ScenarioDef, TaskSpec, DOWN, LEFT, NOOP, N_MOVE_ACTIONS, RIGHT, UP};
use crate::error::{MadtError, Result};
use crate::rng::rng_from_seed;

/// Observation after `reset` or `step`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    pub obs: Vec<Vec<f64>>,
    pub avail: Vec<Vec<bool>>,
    pub reward: f64,
    pub done: bool,
    pub won: bool,
}

type Cell = (i64, i64);

fn manhattan(a: Cell, b: Cell) -> i64 {
    (a.0 - b.0).abs() + (a.1 - b.1).abs()
}

/// Team reach-and-tag on a bordered grid.
///
/// Agents move one cell per step or tag a live target within Manhattan
/// distance 1. The episode is won when every target is tagged and ends at
/// `max_episode_len` otherwise. Agents may share cells.
#[derive(Debug, Clone)]
pub struct GridEnv {
    def: ScenarioDef,
    spec: TaskSpec,
    agents: Vec<Cell>,
    targets: Vec<Cell>,
    alive: Vec<bool>,
    t: usize,
    done: bool,
    won: bool,
}

impl GridEnv {
    pub fn new(def: ScenarioDef) -> Result<Self> {
        def.validate()?;
        let spec = def.task_spec();
        Ok(GridEnv {
            agents: vec![(0, 0); def.n_agents],
            targets: vec![(0, 0); def.n_targets],
            alive: vec![true; def.n_targets],
            def,
            spec,
            t: 0,
            done: true,
            won: false,
        })
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn def(&self) -> &ScenarioDef {
        &self.def
    }

    pub fn timestep(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn agent_cell(&self, i: usize) -> (i64, i64) {
        self.agents[i]
    }

    pub fn target_cell(&self, j: usize) -> (i64, i64) {
        self.targets[j]
    }

    pub fn target_alive(&self, j: usize) -> bool {
        self.alive[j]
    }

    /// Deterministic layout for `seed`; fixed cells from the definition win.
    pub fn reset(&mut self, seed: u64) -> StepOutcome {
        let mut rng = rng_from_seed(seed);
        let (w, h) = (self.def.width as i64, self.def.height as i64);
        let mut cells: Vec<Cell> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).collect();
        cells.shuffle(&mut rng);
        let mut free = cells.into_iter();
        self.targets = match &self.def.targets {
            Some(ts) => ts.iter().map(|c| (c[0] as i64, c[1] as i64)).collect(),
            None => (&mut free).take(self.def.n_targets).collect(),
        };
        self.agents = match &self.def.agent_starts {
            Some(s) => s.iter().map(|c| (c[0] as i64, c[1] as i64)).collect(),
            None => free
                .filter(|c| !self.targets.contains(c))
                .take(self.def.n_agents)
                .collect(),
        };
        self.alive = vec![true; self.def.n_targets];
        self.t = 0;
        self.done = false;
        self.won = false;
        self.outcome(0.0)
    }

    /// Current observation without advancing time.
    pub fn observe(&self) -> StepOutcome {
        self.outcome(0.0)
    }

    fn outcome(&self, reward: f64) -> StepOutcome {
        StepOutcome {
            state: self.state(),
            obs: (0..self.def.n_agents).map(|i| self.obs(i)).collect(),
            avail: (0..self.def.n_agents).map(|i| self.avail(i)).collect(),
            reward,
            done: self.done,
            won: self.won,
        }
    }

    fn norm(&self, c: Cell) -> (f64, f64) {
        (
            c.0 as f64 / (self.def.width - 1) as f64,
            c.1 as f64 / (self.def.height - 1) as f64,
        )
    }

    /// Agent coordinates, then target coordinates with a live flag, all in [0, 1].
    pub fn state(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.spec.state_dim);
        for &a in &self.agents {
            let (x, y) = self.norm(a);
            s.extend([x, y]);
        }
        for (j, &tg) in self.targets.iter().enumerate() {
            let (x, y) = self.norm(tg);
            s.extend([x, y, if self.alive[j] { 1.0 } else { 0.0 }]);
        }
        s
    }

    /// Own position, then per target `[dx, dy, visible, live]`, then per other
    /// agent `[dx, dy, visible]`. Entities beyond the sight radius read as zeros.
    pub fn obs(&self, i: usize) -> Vec<f64> {
        let me = self.agents[i];
        let r = self.def.sight_radius as i64;
        let rf = r as f64;
        let visible = |c: Cell| (c.0 - me.0).abs() <= r && (c.1 - me.1).abs() <= r;
        let mut o = Vec::with_capacity(self.spec.obs_dim);
        let (x, y) = self.norm(me);
        o.extend([x, y]);
        for (j, &tg) in self.targets.iter().enumerate() {
            if visible(tg) {
                o.extend([
                    (tg.0 - me.0) as f64 / rf,
                    (tg.1 - me.1) as f64 / rf,
                    1.0,
                    if self.alive[j] { 1.0 } else { 0.0 },
                ]);
            } else {
                o.extend([0.0; 4]);
            }
        }
        for (k, &other) in self.agents.iter().enumerate() {
            if k == i {
                continue;
            }
            if visible(other) {
                o.extend([
                    (other.0 - me.0) as f64 / rf,
                    (other.1 - me.1) as f64 / rf,
                    1.0,
                ]);
            } else {
                o.extend([0.0; 3]);
            }
        }
        o
    }

    /// No-op always; moves that stay on the grid; tags of live targets within distance 1.
    pub fn avail(&self, i: usize) -> Vec<bool> {
        let mut m = vec![false; self.spec.n_actions];
        if self.done {
            m[NOOP] = true;
            return m;
        }
        let (x, y) = self.agents[i];
        let (w, h) = (self.def.width as i64, self.def.height as i64);
        m[NOOP] = true;
        m[UP] = y > 0;
        m[DOWN] = y + 1 < h;
        m[LEFT] = x > 0;
        m[RIGHT] = x + 1 < w;
        for (j, &tg) in self.targets.iter().enumerate() {
            m[N_MOVE_ACTIONS + j] = self.alive[j] && manhattan((x, y), tg) <= 1;
        }
        m
    }

    fn potential(&self, agents: &[Cell], alive: &[bool]) -> i64 {
        self.targets
            .iter()
            .zip(alive)
            .filter(|(_, &a)| a)
            .map(|(&tg, _)| agents.iter().map(|&a| manhattan(a, tg)).min().unwrap_or(0))
            .sum()
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if self.done {
            return Err(MadtError::Contract("step called on a finished episode".into()));
        }
        if actions.len() != self.def.n_agents {
            return Err(MadtError::Contract(format!(
                "expected {} actions, got {}",
                self.def.n_agents,
                actions.len()
            )));
        }
        for (i, &a) in actions.iter().enumerate() {
            let avail = self.avail(i);
            if a >= avail.len() || !avail[a] {
                return Err(MadtError::Contract(format!(
                    "illegal action {a} for agent {i} at t={} in `{}`",
                    self.t, self.def.id
                )));
            }
        }
        let before = self.potential(&self.agents, &self.alive);
        let mut tagged = 0usize;
        for (i, &a) in actions.iter().enumerate() {
            let (x, y) = self.agents[i];
            self.agents[i] = match a {
                UP => (x, y - 1),
                DOWN => (x, y + 1),
                LEFT => (x - 1, y),
                RIGHT => (x + 1, y),
                _ => (x, y),
            };
            if a >= N_MOVE_ACTIONS {
                let j = a - N_MOVE_ACTIONS;
                if self.alive[j] {
                    self.alive[j] = false;
                    tagged += 1;
                }
            }
        }
        let after = self.potential(&self.agents, &self.alive);
        self.t += 1;
        self.won = self.alive.iter().all(|a| !a);
        self.done = self.won || self.t >= self.def.max_episode_len;
        let mut reward = -self.def.time_penalty
            + self.def.progress_coef * (before - after) as f64
            + self.def.tag_reward * tagged as f64;
        if self.won {
            reward += self.def.terminal_bonus;
        }
        Ok(self.outcome(reward))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::scenario::Registry;

    fn pinned() -> GridEnv {
        GridEnv::new(
            ScenarioDef::from_toml(
                "id='pin'\nwidth=4\nheight=3\nn_agents=1\nn_targets=1\nsight_radius=3\nmax_episode_len=10\nagent_starts=[[0,0]]\ntargets=[[2,0]]",
            )
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn reset_is_deterministic_and_sized() {
        let reg = Registry::builtin();
        for spec in reg.specs() {
            let mut a = GridEnv::new(reg.get(&spec.scenario_id).unwrap().clone()).unwrap();
            let mut b = a.clone();
            let oa = a.reset(11);
            let ob = b.reset(11);
            assert_eq!(oa, ob);
            assert!(!oa.done);
            assert_eq!(oa.state.len(), spec.state_dim);
            for o in &oa.obs {
                assert_eq!(o.len(), spec.obs_dim);
            }
        }
    }

    #[test]
    fn corner_start_masks_moves_into_walls() {
        let mut env = pinned();
        let o = env.reset(0);
        let m = &o.avail[0];
        assert!(m[NOOP] && !m[UP] && !m[LEFT] && m[DOWN] && m[RIGHT]);
        assert!(!m[N_MOVE_ACTIONS], "target two cells away is not taggable");
    }

    #[test]
    fn noop_reward_is_the_time_penalty() {
        let mut env = pinned();
        env.reset(0);
        let o = env.step(&[NOOP]).unwrap();
        assert_eq!(o.reward, -0.01);
        assert!(!o.done);
    }

    #[test]
    fn winning_transition_adds_terminal_bonus() {
        let mut env = pinned();
        env.reset(0);
        let o = env.step(&[RIGHT]).unwrap();
        assert!((o.reward - (-0.01 + 0.1)).abs() < 1e-12);
        assert!(o.avail[0][N_MOVE_ACTIONS]);
        let o = env.step(&[N_MOVE_ACTIONS]).unwrap();
        assert!(o.done && o.won);
        // tag: +0.5, progress: the tagged target leaves the potential (distance 1)
        assert!((o.reward - (-0.01 + 0.1 + 0.5 + 1.0)).abs() < 1e-12, "{}", o.reward);
        assert!(env.step(&[NOOP]).is_err());
    }

    #[test]
    fn illegal_action_is_rejected() {
        let mut env = pinned();
        env.reset(0);
        let err = env.step(&[UP]).unwrap_err();
        assert!(matches!(err, MadtError::Contract(_)));
        assert!(env.step(&[99]).is_err());
    }

    #[test]
    fn episode_ends_at_max_len() {
        let mut env = pinned();
        env.reset(0);
        let mut last = None;
        for _ in 0..10 {
            last = Some(env.step(&[NOOP]).unwrap());
        }
        let o = last.unwrap();
        assert!(o.done && !o.won);
    }
}
