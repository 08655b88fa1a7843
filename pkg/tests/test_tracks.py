import numpy as np
import pytest

from langevin_ud.tracks import Track, read_tracks_csv, thin, write_tracks_csv


def make_track(track_id="a", n=5, with_vel=True):
    t = np.arange(n) * 0.5
    pos = np.column_stack([np.sin(t), np.cos(t)]) / 3.0
    vel = np.column_stack([np.cos(t), -np.sin(t)]) / 3.0 if with_vel else None
    return Track(t, pos, vel, track_id=track_id)


class TestTrack:
    def test_times_must_increase(self):
        with pytest.raises(ValueError, match="row 2"):
            Track([0.0, 1.0, 1.0], np.zeros((3, 2)), track_id="x")

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="3 times but 2 positions"):
            Track([0.0, 1.0, 2.0], np.zeros((2, 2)))

    def test_non_finite(self):
        with pytest.raises(ValueError, match="non-finite"):
            Track([0.0, 1.0], [[0.0, np.nan], [0.0, 0.0]])

    def test_read_only(self):
        tr = make_track()
        with pytest.raises(ValueError):
            tr.positions[0, 0] = 1.0

    def test_covariate_length_checked(self):
        with pytest.raises(ValueError, match="temp"):
            Track([0.0, 1.0], np.zeros((2, 2)), covariates={"temp": [1.0, 2.0, 3.0]})

    def test_subset_keeps_everything(self):
        tr = Track([0.0, 1.0, 2.0], np.zeros((3, 2)), np.ones((3, 2)), {"temp": [1.0, 2.0, 3.0]}, "q")
        sub = thin(tr, 2)
        np.testing.assert_array_equal(sub.covariates["temp"], [1.0, 3.0])
        assert sub.track_id == "q" and sub.velocities.shape == (2, 2)


class TestCsv:
    def test_round_trip_exact(self, tmp_path):
        tracks = [make_track("a"), make_track("b", 7)]
        write_tracks_csv(tracks, tmp_path / "t.csv")
        back = read_tracks_csv(tmp_path / "t.csv")
        assert [t.track_id for t in back] == ["a", "b"]
        for a, b in zip(tracks, back):
            np.testing.assert_array_equal(a.times, b.times)
            np.testing.assert_array_equal(a.positions, b.positions)
            np.testing.assert_array_equal(a.velocities, b.velocities)

    def test_without_velocities(self, tmp_path):
        write_tracks_csv([make_track("a", with_vel=False)], tmp_path / "t.csv")
        assert (tmp_path / "t.csv").read_text().splitlines()[0] == "track_id,t,x,y"
        assert read_tracks_csv(tmp_path / "t.csv")[0].velocities is None

    def test_extra_columns_become_covariates(self, tmp_path):
        (tmp_path / "t.csv").write_text("track_id,t,x,y,temp\nk,0,0,0,10\nk,1,1,0,11\nk,2,1,1,12\n")
        tr = read_tracks_csv(tmp_path / "t.csv")[0]
        np.testing.assert_array_equal(tr.covariates["temp"], [10, 11, 12])

    def test_missing_column(self, tmp_path):
        (tmp_path / "t.csv").write_text("track_id,t,x\n")
        with pytest.raises(ValueError, match="missing"):
            read_tracks_csv(tmp_path / "t.csv")

    def test_bad_value_names_line(self, tmp_path):
        (tmp_path / "t.csv").write_text("track_id,t,x,y\na,0,0,0\na,1,oops,0\n")
        with pytest.raises(ValueError, match=r"t.csv:3"):
            read_tracks_csv(tmp_path / "t.csv")

    def test_three_dimensional_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="2-d"):
            write_tracks_csv([Track([0.0, 1.0], np.zeros((2, 3)))], tmp_path / "t.csv")
