"""Deterministic desk-scale simulators and the path-tracking controller."""

from .control import PdController, TrackResult, TraceRow, pd_track  # noqa: F401
from .fpv import (FpvScene, RoomType, StepEvent, fpv_in_success_cell,  # noqa: F401
                  fpv_next_step_cell, fpv_render, fpv_scene_from_json,
                  fpv_scene_to_json, fpv_shortest_path_cells, fpv_step,
                  generate_fpv_scene, target_visible, visible_objects)
from .tpv import (COLLISION_RADIUS, GOAL_EPS, ORACLE_CLEARANCE, TpvScene,  # noqa: F401
                  collision_checker, export_trace_csv, floor_mask,
                  generate_tpv_room, goal_distance_field, oracle_plan_answer,
                  oracle_plan_tpv, shortest_path_length, tpv_annotated_frame,
                  tpv_render, tpv_replan_loop, tpv_scene_from_json,
                  tpv_scene_to_json)
