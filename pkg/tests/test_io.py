import json

import numpy as np
import pytest

from cellsynth import io, scenarios
from cellsynth.planner import plan_from_environment
from cellsynth.simulate import DeformationMap, run


def env_dict():
    return io.environment_to_dict(scenarios.l_shape())


class TestEnvironmentSchema:
    def test_roundtrip(self, tmp_path):
        env = scenarios.floor()
        io.save_environment(env, tmp_path / "e.json")
        back = io.load_environment(tmp_path / "e.json")
        np.testing.assert_array_equal(back.vertices, env.vertices)
        assert [c.vertex_ids for c in back.cells] == [c.vertex_ids for c in env.cells]
        assert back.holes == env.holes
        np.testing.assert_array_equal(back.goal, env.goal)

    def test_patrol_roundtrip(self):
        env = scenarios.ring()
        assert io.environment_from_dict(io.environment_to_dict(env)).patrol == env.patrol

    def test_landmark_override_kept(self):
        d = env_dict()
        d["cells"][0]["landmark_ids"] = [0, 1]
        env = io.environment_from_dict(d)
        assert env.cells[0].landmark_ids == (0, 1)
        assert io.environment_to_dict(env)["cells"][0]["landmark_ids"] == [0, 1]

    @pytest.mark.parametrize("mutate,where", [
        (lambda d: d.pop("vertices"), "environment: missing field 'vertices'"),
        (lambda d: d["cells"][1].pop("id"), "environment.cells[1]: missing field 'id'"),
        (lambda d: d["cells"][2].__setitem__("vertex_ids", [0, 1, 99]),
         "environment.cells[2].vertex_ids"),
        (lambda d: d["cells"][0].__setitem__("landmark_ids", []), "environment.cells[0].landmark_ids"),
        (lambda d: d["cells"][0].__setitem__("landmark_ids", [0, 42]),
         "environment.cells[0].landmark_ids"),
        (lambda d: d.__setitem__("vertices", [[0, 0, 0]]), "environment.vertices"),
        (lambda d: d.__setitem__("goal", [1, 2, 3]), "environment.goal"),
        (lambda d: d["cells"][0].__setitem__("vertex_ids", d["cells"][0]["vertex_ids"][::-1]),
         "environment.cells"),
    ])
    def test_errors_name_the_field(self, mutate, where):
        d = env_dict()
        mutate(d)
        with pytest.raises(io.SchemaError) as err:
            io.environment_from_dict(d)
        assert str(err.value).startswith(where)

    def test_json_position(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{\n  "vertices": [1, 2,,]\n}\n')
        with pytest.raises(io.SchemaError, match=r"bad.json:2:\d+"):
            io.load_environment(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(io.SchemaError, match="not found"):
            io.read_json(tmp_path / "nope.json")


class TestSystemSchema:
    def test_presets(self):
        assert io.system_from_dict({"order": 1, "u_max": 2.0}).n_x == 2
        di = io.system_from_dict({"order": 2, "v_max": 1.0, "u_max": 2.0})
        assert di.n_x == 4 and list(di.b_dyn) == [1.0] * 4

    def test_second_order_needs_velocity_box(self):
        with pytest.raises(io.SchemaError, match="v_max"):
            io.system_from_dict({"order": 2, "u_max": 2.0})

    def test_bad_order(self):
        with pytest.raises(io.SchemaError, match="order"):
            io.system_from_dict({"order": 3, "u_max": 1.0})

    def test_explicit(self):
        sys = scenarios.ring_scenario().system
        back = io.system_from_dict(sys.to_dict())
        np.testing.assert_array_equal(back.A, sys.A)


class TestBundle:
    def test_roundtrip_bitwise(self, tmp_path, l_synth):
        sc, plan, env, res = l_synth
        path = io.save_bundle(tmp_path / "b.json", res.controllers, env, sc.system, plan)
        ctrls, system, plan2 = io.load_bundle(path, env)
        assert plan2.exits == plan.exits and plan2.successor == plan.successor
        for cid, c in res.controllers.items():
            assert ctrls[cid].K1.tobytes() == c.K1.tobytes()
            assert ctrls[cid].S_l == c.S_l
            assert ctrls[cid].landmark_ids == c.landmark_ids
        a = run(env, sc.system, res.controllers, plan, sc.start_state(0), 5.0)
        b = run(env, system, ctrls, plan2, sc.start_state(0), 5.0)
        assert a.x.tobytes() == b.x.tobytes()

    def test_tampered_digest(self, tmp_path, l_synth):
        sc, plan, env, res = l_synth
        d = io.bundle_to_dict(res.controllers, env, sc.system, plan)
        d["controllers"]["3"]["K1"]["data"][0] += 1e-12
        with pytest.raises(io.SchemaError, match="digest"):
            io.bundle_from_dict(d, env)

    def test_other_environment(self, l_synth):
        sc, plan, env, res = l_synth
        d = io.bundle_to_dict(res.controllers, env, sc.system, plan)
        moved = DeformationMap({0: env.vertices[0] + 1e-9}).apply(env)
        with pytest.raises(io.SchemaError, match="different environment"):
            io.bundle_from_dict(d, moved)

    def test_landmark_order_in_hash(self, l_synth):
        env = l_synth[2]
        d = io.environment_to_dict(env)
        ids = d["cells"][0]["vertex_ids"]
        d["cells"][0]["landmark_ids"] = ids[1:] + ids[:1]
        assert io.env_hash(io.environment_from_dict(d)) != io.env_hash(env)


class TestTrajectoryFiles:
    def test_csv(self, tmp_path, l_synth):
        sc, plan, env, res = l_synth
        traj = run(env, sc.system, res.controllers, plan, sc.start_state(0), 2.0)
        text = io.trajectory_csv(traj)
        lines = text.splitlines()
        assert lines[0] == "t,x1,x2,u1,u2,cell,V,min_h"
        assert len(lines) == len(traj) + 1
        assert lines[1].split(",")[1] == f"{traj.x[0, 0]:.9g}"
        data = io.read_trajectory_csv(io.write_trajectory_csv(traj, tmp_path / "t.csv"))
        np.testing.assert_allclose(data["x2"], traj.x[:, 1], rtol=1e-8)
        np.testing.assert_array_equal(data["cell"], traj.cell)

    def test_svg(self, l_synth):
        sc, plan, env, res = l_synth
        traj = run(env, sc.system, res.controllers, plan, sc.start_state(0), 2.0)
        svg = io.svg_plot(env, [traj], [sc.starts[0]], env.goal)
        assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
        assert svg.count("<polygon") == 1 + len(env.cells) + len(env.holes)
        assert svg.count("<polyline") == 1 and svg.count("<circle") == 2


class TestConfig:
    def write(self, tmp_path, **over):
        scenarios.export("l_shape", tmp_path)
        cfg = json.loads((tmp_path / "config.json").read_text())
        cfg.update(over)
        (tmp_path / "config.json").write_text(json.dumps(cfg))
        return tmp_path / "config.json"

    def test_loads(self, tmp_path):
        cfg = io.load_config(self.write(tmp_path))
        assert cfg.environment == tmp_path / "environment.json"
        assert cfg.out == tmp_path / "out"
        assert cfg.seed == 0

    @pytest.mark.parametrize("over,match", [
        ({"dt": 0}, "dt must be positive"),
        ({"t_max": -1}, "t_max"),
        ({"poles_b": [1.0, 0.0]}, "poles must be positive"),
        ({"method": "cplex"}, "method"),
        ({"enviroment": "x"}, "unknown fields"),
        ({"environment": "missing.json"}, "does not exist"),
        ({"deformation": "missing.json"}, "does not exist"),
    ])
    def test_rejects(self, tmp_path, over, match):
        with pytest.raises(io.SchemaError, match=match):
            io.load_config(self.write(tmp_path, **over))


class TestDeformationFile:
    def test_roundtrip(self, tmp_path):
        dm = scenarios.floor_deformation()
        back = io.load_deformation(io.save_deformation(dm, tmp_path / "d.json"))
        assert sorted(back.moves) == sorted(dm.moves)
        for k in dm.moves:
            np.testing.assert_array_equal(back.moves[k], dm.moves[k])

    def test_bad_key(self, tmp_path):
        (tmp_path / "d.json").write_text('{"moves": {"a": [0, 0]}}')
        with pytest.raises(io.SchemaError, match="integers"):
            io.load_deformation(tmp_path / "d.json")

    def test_out_of_range(self, tmp_path):
        (tmp_path / "d.json").write_text('{"moves": {"500": [0, 0]}}')
        with pytest.raises(io.SchemaError, match="out of range"):
            io.load_deformation(tmp_path / "d.json", scenarios.ring())


def test_atomic_write_leaves_no_temp(tmp_path):
    io.atomic_write(tmp_path / "a" / "f.txt", "hello")
    assert [p.name for p in (tmp_path / "a").iterdir()] == ["f.txt"]


def test_plan_dict_roundtrip():
    plan, _, _ = plan_from_environment(scenarios.ring())
    back = io.plan_from_dict(plan.to_dict())
    assert back.exits == plan.exits and back.cycle == plan.cycle
