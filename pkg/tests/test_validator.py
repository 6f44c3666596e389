from config import save_config
from gridworld import GridSpec
from validator import validate_config_file, validate_readings_file, validate_trajectory_file


def test_valid_config(tmp_path, small_config):
    path = tmp_path / "config.yaml"
    save_config(small_config, path)
    assert validate_config_file(path) == {'valid': True, 'reason': '', 'problems': []}


def test_invalid_config_names_field(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("fleet:\n  size: 0\n", encoding="utf-8")
    report = validate_config_file(path)
    assert not report['valid']
    assert report['problems'][0]['field'] == "fleet.size"
    assert "fleet.size" in report['reason']


def test_valid_trajectory_file(tmp_path):
    path = tmp_path / "trajectories.csv"
    path.write_text("vehicle_id,candidate_k,t,x,y\n1,0,1,1,1\n1,0,2,1,2\n2,0,1,3,3\n", encoding="utf-8")
    report = validate_trajectory_file(path, grid=GridSpec(4, 4, 5))
    assert report['valid']
    assert report['vehicles'] == 2


def test_trajectory_jump_is_reported_with_line(tmp_path):
    path = tmp_path / "trajectories.csv"
    path.write_text("vehicle_id,candidate_k,t,x,y\n1,0,1,1,1\n1,0,2,3,3\n", encoding="utf-8")
    report = validate_trajectory_file(path, grid=GridSpec(4, 4, 5))
    assert not report['valid']
    assert report['problems'][0]['kind'] == 'adjacency'
    assert report['problems'][0]['line'] == 3


def test_trajectory_against_config_grid(tmp_path, small_config):
    config_path = tmp_path / "config.yaml"
    save_config(small_config, config_path)
    path = tmp_path / "trajectories.csv"
    path.write_text("vehicle_id,candidate_k,t,x,y\n1,0,1,9,1\n", encoding="utf-8")
    report = validate_trajectory_file(path, config_path=config_path)
    assert not report['valid']
    assert report['problems'][0]['kind'] == 'out-of-bounds'


def test_unparseable_trajectory_row(tmp_path):
    path = tmp_path / "trajectories.csv"
    path.write_text("vehicle_id,candidate_k,t,x,y\n1,0,one,1,1\n", encoding="utf-8")
    report = validate_trajectory_file(path, grid=GridSpec(4, 4, 5))
    assert report['problems'][0]['line'] == 2


def test_missing_file(tmp_path):
    report = validate_trajectory_file(tmp_path / "nope.csv", grid=GridSpec(2, 2, 2))
    assert not report['valid']
    assert "cannot read" in report['reason']


def test_readings_on_excluded_cell_and_duplicates(tmp_path):
    path = tmp_path / "readings.csv"
    path.write_text(
        "sensor_id,t,x,y,value\n1,1,1,1,50.0\n1,1,2,1,51.0\n2,1,2,2,49.5\n",
        encoding="utf-8",
    )
    report = validate_readings_file(path, grid=GridSpec(3, 3, 2, excluded={(2, 2)}))
    assert not report['valid']
    assert report['readings'] == 3
    assert [p['line'] for p in report['problems']] == [3, 4]


def test_clean_readings(tmp_path):
    path = tmp_path / "readings.csv"
    path.write_text("sensor_id,t,x,y,value\n1,1,1,1,50.0\n2,1,1,1,52.0\n", encoding="utf-8")
    assert validate_readings_file(path)['valid']


def test_reading_lines_count_blank_rows(tmp_path):
    path = tmp_path / "readings.csv"
    path.write_text(
        "sensor_id,t,x,y,value\n1,1,1,1,50.0\n\n\n1,1,2,1,51.0\n",
        encoding="utf-8",
    )
    report = validate_readings_file(path)
    assert report['readings'] == 2
    assert [p['line'] for p in report['problems']] == [5]
