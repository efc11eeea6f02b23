//! Continuous 2-D point-mass mazes over cell grids.
//!
//! State is (x, y, vx, vy) in cell units; the action is a per-axis force in
//! [-1, 1]. Integration is a damped Euler step with axis-aligned collision
//! handling: a move into a wall cell is cancelled and that velocity
//! component zeroed. Reaching within 0.5 cells of the goal center pays 1.0.
//!
//! Layouts come from built-in names or from plain-text grids ('#' wall,
//! '.' free, 'S' start, 'G' goal, one row per line).

use super::{min_max_encode, Action, ActionSpec, Environment, StepResult};
use crate::error::{Error, Result};
use crate::numerics::linalg::Vector;
use crate::numerics::rng::Rng;
use std::collections::VecDeque;

pub const DT: f64 = 0.1;
pub const DAMPING: f64 = 0.9;
pub const MAX_FORCE: f64 = 1.0;
/// Terminal speed per axis: dt*f_max / (1 - damping).
pub const MAX_SPEED: f64 = DT * MAX_FORCE / (1.0 - DAMPING);
pub const GOAL_RADIUS: f64 = 0.5;
pub const DEFAULT_STEP_LIMIT: usize = 5000;

const OPEN: &str = "\
########
#S.....#
#......#
#......#
#......#
#......#
#....G.#
########";

// One wall spanning 2/3 of the interior width; start and goal sit on the
// same (blocked) side so the path has to swing around the open end.
const U_SHAPE: &str = "\
########
#......#
#.S....#
#......#
#####..#
#......#
#..G...#
########";

// Two staggered walls; the shortest path is forced into a double switchback.
const DOUBLE_U: &str = "\
########
#S.....#
#......#
#####..#
#......#
#..#####
#G.....#
########";

const OBSTACLES: &str = "\
##########
#S.......#
#..#..#..#
#........#
#.#..##..#
#....#...#
#..#...#.#
#.....#..#
#.......G#
##########";

/// Built-in layout text by name.
pub fn builtin_layout(name: &str) -> Result<&'static str> {
    match name {
        "open" => Ok(OPEN),
        "u_shape" => Ok(U_SHAPE),
        "double_u" => Ok(DOUBLE_U),
        "obstacles" => Ok(OBSTACLES),
        other => Err(Error::UnknownLayout(other.to_string())),
    }
}

/// Wall grid in row-major order; `true` means wall.
#[derive(Debug, Clone)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    walls: Vec<bool>,
}

impl Grid {
    pub fn is_wall(&self, cx: i64, cy: i64) -> bool {
        if cx < 0 || cy < 0 || cx >= self.width as i64 || cy >= self.height as i64 {
            return true;
        }
        self.walls[cy as usize * self.width + cx as usize]
    }

    fn wall_at(&self, x: f64, y: f64) -> bool {
        self.is_wall(x.floor() as i64, y.floor() as i64)
    }

    pub fn free_cells(&self) -> usize {
        self.walls.iter().filter(|w| !**w).count()
    }
}

/// Shortest 4-connected path length in cells between two free cells.
pub fn grid_bfs_dist(grid: &Grid, from: (usize, usize), to: (usize, usize)) -> Option<usize> {
    if grid.is_wall(from.0 as i64, from.1 as i64) || grid.is_wall(to.0 as i64, to.1 as i64) {
        return None;
    }
    let mut dist = vec![usize::MAX; grid.width * grid.height];
    let mut queue = VecDeque::new();
    dist[from.1 * grid.width + from.0] = 0;
    queue.push_back(from);
    while let Some((x, y)) = queue.pop_front() {
        let d = dist[y * grid.width + x];
        if (x, y) == to {
            return Some(d);
        }
        for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if !grid.is_wall(nx, ny) {
                let idx = ny as usize * grid.width + nx as usize;
                if dist[idx] == usize::MAX {
                    dist[idx] = d + 1;
                    queue.push_back((nx as usize, ny as usize));
                }
            }
        }
    }
    None
}

/// Parse a grid text. Requires a rectangular grid with exactly one 'S' and
/// one 'G'; both must be free cells.
pub fn parse_grid(text: &str) -> Result<(Grid, (usize, usize), (usize, usize))> {
    let rows: Vec<&str> = text
        .lines()
        .map(|l| l.trim_end())
        .filter(|l| !l.is_empty())
        .collect();
    if rows.len() < 3 {
        return Err(Error::InvalidLayout("grid needs at least 3 rows".into()));
    }
    let width = rows[0].chars().count();
    if width < 3 {
        return Err(Error::InvalidLayout("grid needs at least 3 columns".into()));
    }
    let height = rows.len();
    let mut walls = vec![false; width * height];
    let mut start = None;
    let mut goal = None;
    for (y, row) in rows.iter().enumerate() {
        if row.chars().count() != width {
            return Err(Error::InvalidLayout(format!(
                "row {y} has {} columns, expected {width}",
                row.chars().count()
            )));
        }
        for (x, ch) in row.chars().enumerate() {
            match ch {
                '#' => walls[y * width + x] = true,
                '.' => {}
                'S' => {
                    if start.replace((x, y)).is_some() {
                        return Err(Error::InvalidLayout("multiple start cells".into()));
                    }
                }
                'G' => {
                    if goal.replace((x, y)).is_some() {
                        return Err(Error::InvalidLayout("multiple goal cells".into()));
                    }
                }
                other => {
                    return Err(Error::InvalidLayout(format!(
                        "unexpected character '{other}' at ({x}, {y})"
                    )))
                }
            }
        }
    }
    let start = start.ok_or_else(|| Error::InvalidLayout("missing start cell 'S'".into()))?;
    let goal = goal.ok_or_else(|| Error::InvalidLayout("missing goal cell 'G'".into()))?;
    let grid = Grid {
        width,
        height,
        walls,
    };
    if grid_bfs_dist(&grid, start, goal).is_none() {
        return Err(Error::InvalidLayout("goal unreachable from start".into()));
    }
    Ok((grid, start, goal))
}

#[derive(Debug, Clone)]
pub struct MazeEnv {
    grid: Grid,
    start: (usize, usize),
    goal: (usize, usize),
    spec: ActionSpec,
    step_limit: usize,
    /// Dense index of each free cell, walls map to usize::MAX.
    free_index: Vec<usize>,
    free_count: usize,
    pos: [f64; 2],
    vel: [f64; 2],
    steps: usize,
}

impl MazeEnv {
    pub fn from_layout_name(name: &str) -> Result<Self> {
        Self::from_grid_text(builtin_layout(name)?)
    }

    pub fn from_grid_text(text: &str) -> Result<Self> {
        let (grid, start, goal) = parse_grid(text)?;
        Ok(Self::from_parts(grid, start, goal, DEFAULT_STEP_LIMIT))
    }

    pub fn from_grid_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_grid_text(&text)
    }

    pub fn with_step_limit(mut self, step_limit: usize) -> Self {
        self.step_limit = step_limit;
        self
    }

    fn from_parts(grid: Grid, start: (usize, usize), goal: (usize, usize), limit: usize) -> Self {
        let mut free_index = vec![usize::MAX; grid.width * grid.height];
        let mut count = 0;
        for (i, wall) in grid.walls.iter().enumerate() {
            if !wall {
                free_index[i] = count;
                count += 1;
            }
        }
        let spec = ActionSpec::Continuous {
            low: Vector::from_element(2, -MAX_FORCE),
            high: Vector::from_element(2, MAX_FORCE),
        };
        let pos = [start.0 as f64 + 0.5, start.1 as f64 + 0.5];
        Self {
            grid,
            start,
            goal,
            spec,
            step_limit: limit,
            free_index,
            free_count: count,
            pos,
            vel: [0.0; 2],
            steps: 0,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn start_cell(&self) -> (usize, usize) {
        self.start
    }

    pub fn goal_cell(&self) -> (usize, usize) {
        self.goal
    }

    pub fn goal_center(&self) -> [f64; 2] {
        [self.goal.0 as f64 + 0.5, self.goal.1 as f64 + 0.5]
    }

    /// Test/probe hook.
    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2]) {
        assert!(!self.grid.wall_at(pos[0], pos[1]), "state inside a wall");
        self.pos = pos;
        self.vel = [
            vel[0].clamp(-MAX_SPEED, MAX_SPEED),
            vel[1].clamp(-MAX_SPEED, MAX_SPEED),
        ];
    }

    fn raw(&self) -> Vector {
        Vector::from_vec(vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]])
    }

    fn distance_to_goal(&self, x: f64, y: f64) -> f64 {
        let g = self.goal_center();
        ((x - g[0]).powi(2) + (y - g[1]).powi(2)).sqrt()
    }
}

impl Environment for MazeEnv {
    fn name(&self) -> &'static str {
        "maze"
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn action_spec(&self) -> &ActionSpec {
        &self.spec
    }

    fn step_limit(&self) -> usize {
        self.step_limit
    }

    fn reset(&mut self, _rng: &mut Rng) -> Vector {
        self.pos = [self.start.0 as f64 + 0.5, self.start.1 as f64 + 0.5];
        self.vel = [0.0; 2];
        self.steps = 0;
        self.raw()
    }

    fn step(&mut self, action: &Action, _rng: &mut Rng) -> Result<StepResult> {
        let f = match action {
            Action::Continuous(f) if f.len() == 2 => f,
            other => {
                return Err(Error::InvalidAction(format!(
                    "maze takes 2-d continuous actions, got {other:?}"
                )))
            }
        };
        let fx = f[0].clamp(-MAX_FORCE, MAX_FORCE);
        let fy = f[1].clamp(-MAX_FORCE, MAX_FORCE);
        let mut vx = DAMPING * self.vel[0] + fx * DT;
        let mut vy = DAMPING * self.vel[1] + fy * DT;

        // Axis-aligned moves; a blocked axis cancels and zeroes its velocity.
        let mut x = self.pos[0] + vx * DT;
        if self.grid.wall_at(x, self.pos[1]) {
            x = self.pos[0];
            vx = 0.0;
        }
        let mut y = self.pos[1] + vy * DT;
        if self.grid.wall_at(x, y) {
            y = self.pos[1];
            vy = 0.0;
        }
        self.pos = [x, y];
        self.vel = [vx, vy];
        self.steps += 1;
        let solved = self.distance_to_goal(x, y) <= GOAL_RADIUS;
        Ok(StepResult {
            next_state: self.raw(),
            reward: if solved { 1.0 } else { 0.0 },
            done: solved || self.steps >= self.step_limit,
        })
    }

    fn encode_state(&self, raw: &Vector) -> Vector {
        Vector::from_vec(vec![
            min_max_encode(raw[0], 0.0, self.grid.width as f64),
            min_max_encode(raw[1], 0.0, self.grid.height as f64),
            min_max_encode(raw[2], -MAX_SPEED, MAX_SPEED),
            min_max_encode(raw[3], -MAX_SPEED, MAX_SPEED),
        ])
    }

    fn encoded_bounds(&self) -> (Vector, Vector) {
        (Vector::from_element(4, -1.0), Vector::from_element(4, 1.0))
    }

    fn coverage_cell(&self, raw: &Vector) -> usize {
        let cx = (raw[0].floor().max(0.0) as usize).min(self.grid.width - 1);
        let cy = (raw[1].floor().max(0.0) as usize).min(self.grid.height - 1);
        let idx = self.free_index[cy * self.grid.width + cx];
        debug_assert_ne!(idx, usize::MAX, "coverage query inside a wall cell");
        idx.min(self.free_count.saturating_sub(1))
    }

    fn coverage_cells(&self) -> usize {
        self.free_count
    }

    fn coverage_grid_desc(&self) -> String {
        format!(
            "{} free cells of a {}x{} grid",
            self.free_count, self.grid.width, self.grid.height
        )
    }

    fn goal_distance(&self, raw: &Vector) -> Option<f64> {
        Some(self.distance_to_goal(raw[0], raw[1]))
    }
}
