//! Scripted expert: approach, close, carry, open.

use super::{inflated_extent, segment_hits_box, Action, SceneState, TaskKind, TaskSpec, GRASP_EPS, MAX_STEP};
use crate::geometry::{ImageBox, ImagePoint};

/// Start closing once this close to the grasp point.
pub const CLOSE_RADIUS: f64 = 0.015;
/// Start opening once this close to the place point.
pub const OPEN_RADIUS: f64 = 0.015;
/// Keep closing while within this radius; otherwise abort and reopen.
pub const HOLD_RADIUS: f64 = GRASP_EPS * 0.8;
/// Clearance added around the inflated obstacle for detour corners.
const DETOUR_MARGIN: f64 = 0.03;
/// Clearance used when testing whether a straight segment is free.
const SIGHT_MARGIN: f64 = 0.01;

/// Velocity command toward `to`: exact arrival within one step, unit speed
/// otherwise.
pub fn move_toward(from: &ImagePoint, to: &ImagePoint) -> [f64; 2] {
    let (dx, dy) = (to.x - from.x, to.y - from.y);
    let d = dx.hypot(dy);
    if d <= MAX_STEP {
        [dx / MAX_STEP, dy / MAX_STEP]
    } else {
        [dx / d, dy / d]
    }
}

fn grown(b: &ImageBox, m: f64) -> ImageBox {
    ImageBox::new(b.x_min - m, b.y_min - m, b.x_max + m, b.y_max + m)
}

/// Next waypoint on the way to `goal`, going around the obstacle's
/// inflated extent via its corners when the straight segment is blocked.
pub fn route_waypoint(state: &SceneState, task: &TaskSpec, goal: ImagePoint) -> ImagePoint {
    let pos = state.gripper.position;
    let Some(obstacle) = task.obstacle_id.and_then(|id| state.object(id)) else {
        return goal;
    };
    if state.gripper.held_object == Some(obstacle.id) {
        return goal;
    }
    let base = inflated_extent(obstacle);
    let sight = grown(&base, SIGHT_MARGIN);
    if !segment_hits_box(&pos, &goal, &sight) {
        return goal;
    }
    let corners = grown(&base, DETOUR_MARGIN);
    let candidates = [
        ImagePoint::new(corners.x_min, corners.y_min),
        ImagePoint::new(corners.x_max, corners.y_min),
        ImagePoint::new(corners.x_min, corners.y_max),
        ImagePoint::new(corners.x_max, corners.y_max),
    ];
    candidates
        .iter()
        .filter(|c| c.distance(&pos) > 1e-9 && !segment_hits_box(&pos, c, &sight))
        .map(|c| (pos.distance(c) + c.distance(&goal), *c))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map_or(goal, |(_, c)| c)
}

/// Deterministic phase machine over the true state.
pub fn expert_policy(state: &SceneState, task: &TaskSpec) -> Action {
    let g = &state.gripper;
    let pos = g.position;
    match g.held_object {
        Some(id) if id != task.target_id => [0.0, 0.0, 1.0],
        Some(_) => match task.task_kind {
            TaskKind::Pick | TaskKind::AvoidObstacle => [0.0, 0.0, -1.0],
            TaskKind::PickAndPlace => {
                let goal = task.goal_zone.center();
                let [dx, dy] = move_toward(&pos, &goal);
                let grip = if pos.distance(&goal) <= OPEN_RADIUS { 1.0 } else { -1.0 };
                [dx, dy, grip]
            }
        },
        None => {
            let Some(target) = state.object(task.target_id) else {
                return [0.0, 0.0, 1.0];
            };
            let goal = target.position;
            let dist = pos.distance(&goal);
            if g.aperture < 0.5 {
                // closed on nothing
                return [0.0, 0.0, 1.0];
            }
            let closing = g.aperture < 1.0 && dist <= HOLD_RADIUS;
            let grip = if closing || dist <= CLOSE_RADIUS { -1.0 } else { 1.0 };
            let way = route_waypoint(state, task, goal);
            let [dx, dy] = move_toward(&pos, &way);
            [dx, dy, grip]
        }
    }
}
