import json
import threading
import urllib.error
import urllib.request

import pytest

from cuprank.app.cli import main
from cuprank.app.service import RankingService, make_server, parse_listen
from cuprank.core import write_review_log
from cuprank.profiles import describe_cups


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def service(artifact_file):
    svc = RankingService()
    svc.load(artifact_file)
    return svc


@pytest.fixture
def server(service):
    srv = make_server(service, "127.0.0.1", 0)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield f"http://127.0.0.1:{srv.server_address[1]}"
    srv.shutdown()
    srv.server_close()


def http(url, body=None):
    data = json.dumps(body).encode() if isinstance(body, dict) else body
    req = urllib.request.Request(url, data=data, method="POST" if data is not None else "GET")
    try:
        with urllib.request.urlopen(req, timeout=10) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def some_context(artifact):
    schema = artifact.schema
    return {f: schema.categories(f)[0] for f in schema.feature_names}


class TestService:
    def test_no_model(self):
        svc = RankingService()
        assert svc.health()[0] == 503
        assert svc.rank(b"{}")[0] == 503

    def test_rank(self, service, small_training):
        art = small_training.artifact
        body = json.dumps({"context": some_context(art), "endorsements": ["Beach"],
                           "top_n": 3}).encode()
        status, out = service.rank(body)
        assert status == 200
        assert len(out["results"]) == 3
        assert out["cup_id"] in art.cups.cup_ids
        assert out["snapshot"].startswith("1:")

    def test_strict_and_lenient(self, artifact_file):
        body = json.dumps({"context": {"OS": "BeOS"}, "endorsements": ["Beach", "Surf"]}).encode()
        strict = RankingService()
        strict.load(artifact_file)
        assert strict.rank(body)[0] == 400
        lenient = RankingService(strict=False)
        lenient.load(artifact_file)
        status, out = lenient.rank(body)
        assert status == 200 and out["ignored"] == ["OS=BeOS", "Surf"]

    @pytest.mark.parametrize("body", [b"nope", b"[]", b'{"top_n": 0}',
                                      b'{"endorsements": "Beach"}', b'{"context": {"OS": 3}}'])
    def test_bad_requests(self, service, body):
        assert service.rank(body)[0] == 400

    def test_reload_failure_keeps_snapshot(self, service, tmp_path):
        before = service.snapshot
        bad = tmp_path / "bad.cup"
        bad.write_bytes(b"garbage\n")
        status, out = service.reload(json.dumps({"path": str(bad)}).encode())
        assert status == 422 and service.snapshot is before
        assert out["snapshot"] == before.tag

    def test_reload_bumps_tag(self, service):
        old = service.snapshot.tag
        status, out = service.reload(b"")
        assert status == 200 and out["snapshot"] != old
        assert out["snapshot"].split(":")[1] == old.split(":")[1]

    def test_exact_center_context(self, tmp_path, small_training):
        from dataclasses import replace

        from cuprank.profiles import Cup, CupSet, save_artifact
        art = small_training.artifact
        schema = art.schema
        ctx = {"Device Type": "tablet", "OS": "Linux"}
        coords = [schema.coordinate(f, c) for f, c in ctx.items()]
        cups = CupSet((Cup(0, {0: 1.0}, 0), Cup(1, {j: 1.0 for j in coords}, 1)),
                      dim=schema.n_coordinates, schema_digest=schema.digest())
        rankers = replace(art.rankers, per_cup={1: art.rankers.global_model})
        path = save_artifact(replace(art, cups=cups, rankers=rankers), tmp_path / "m.cup")
        svc = RankingService()
        svc.load(path)
        status, out = svc.rank(json.dumps({"context": ctx, "endorsements": ["Beach"]}).encode())
        assert status == 200 and out["cup_id"] == 1 and not out["used_fallback"]

    def test_fallback_uses_global(self, tmp_path, small_training):
        from dataclasses import replace

        from cuprank.profiles import save_artifact
        from cuprank.ranker import rank
        art = small_training.artifact
        thin = replace(art, rankers=replace(art.rankers, per_cup={}))
        svc = RankingService()
        svc.load(save_artifact(thin, tmp_path / "thin.cup"))
        status, out = svc.rank(b'{"endorsements": []}')
        assert status == 200 and out["used_fallback"]
        assert [r["destination"] for r in out["results"]] == rank(
            art.rankers.global_model, []).destinations

    def test_parse_listen(self):
        assert parse_listen("0.0.0.0:9000") == ("0.0.0.0", 9000)
        assert parse_listen(":81") == ("127.0.0.1", 81)


class TestHttp:
    def test_endpoints(self, server, small_training):
        status, health = http(server + "/health")
        assert status == 200 and health["status"] == "ok"
        status, prof = http(server + "/profiles")
        assert status == 200
        assert prof["profiles"] == json.loads(json.dumps(describe_cups(small_training.artifact)))
        status, out = http(server + "/rank", {"context": {}, "endorsements": []})
        assert status == 200 and len(out["results"]) == 10
        assert http(server + "/nowhere")[0] == 404
        assert http(server + "/rank", b"{")[0] == 400


class TestCli:
    def test_usage_error(self, capsys):
        code, _, err = run_cli(capsys, "train")
        assert code == 1
        assert json.loads(err)["exit"] == 1

    def test_data_error(self, capsys, tmp_path):
        bad = tmp_path / "m.cup"
        bad.write_text("x")
        code, _, err = run_cli(capsys, "inspect", str(bad))
        assert code == 2 and "error" in json.loads(err)

    def test_train_inspect(self, capsys, tmp_path, small_corpus, small_training):
        reviews, _ = small_corpus
        log = tmp_path / "reviews.jsonl"
        with open(log, "w") as fh:
            write_review_log(reviews, fh)
            fh.write('{"destination": "x", "endorsements": []}\n')
        model = tmp_path / "m.cup"
        code, out, _ = run_cli(capsys, "train", "--log", str(log), "--out", str(model),
                               "--k-range", "2..5", "--seed", "3", "--restarts", "2",
                               "--min-support", "20", "--report-dir", str(tmp_path / "rep"))
        assert code == 0
        summary = json.loads(out)
        assert summary["ingest"]["skipped"] == 1
        assert summary["chosen_k"] == small_training.silhouette.chosen_k
        assert summary["cups"] == len(small_training.artifact.cups)
        assert (tmp_path / "rep" / "silhouette.png").stat().st_size > 0
        code, out, _ = run_cli(capsys, "inspect", str(model), "--json")
        assert code == 0
        assert json.loads(out)["profiles"] == json.loads(
            json.dumps(describe_cups(small_training.artifact)))
        code, out, _ = run_cli(capsys, "inspect", str(model))
        assert out.startswith("CUP 0")

    def test_evaluate(self, capsys, tmp_path):
        counts = tmp_path / "counts.json"
        counts.write_text(json.dumps({"arms": [
            {"name": "baseline", "users": 13306, "searches": 34463, "clicks": 6373,
             "conversion": 0.217},
            {"name": "contextual", "users": 13562, "searches": 35505, "clicks": 7866,
             "conversion": 0.213}]}))
        code, out, _ = run_cli(capsys, "evaluate", "--counts", str(counts),
                               "--report-dir", str(tmp_path / "rep"))
        assert code == 0
        assert "22.2%±0.4%" in out
        assert (tmp_path / "rep" / "metrics.png").exists()
        csv_path = tmp_path / "counts.csv"
        csv_path.write_text("name,users,searches,clicks\nA,100,200,30\nB,100,200,50\n")
        code, out, _ = run_cli(capsys, "evaluate", "--counts", str(csv_path))
        assert code == 0 and "B vs A ctr" in out

    def test_generate(self, capsys, tmp_path):
        from cuprank.eval.scenario import builtin_scenario
        path = tmp_path / "log.jsonl"
        code, out, _ = run_cli(capsys, "generate", "--scenario", str(builtin_scenario("cocos")),
                               "--out", str(path))
        assert code == 0
        assert json.loads(out)["reviews"] == sum(1 for _ in open(path))

    def test_unknown_arm(self, capsys):
        from cuprank.eval.scenario import builtin_scenario
        code, _, err = run_cli(capsys, "simulate", "--scenario",
                               str(builtin_scenario("cocos")), "--arms", "global,magic")
        assert code == 2 and "magic" in err
