import asyncio

import pytest

from edg_multigrid.consumer import ConsumerPipeline, TableConsumer, run_studies
from edg_multigrid.exceptions import MeshFormatError
from edg_multigrid.helpers import Status
from edg_multigrid.producer import ProducerPipeline, StudyProducer
from edg_multigrid.studies import ExperimentConfig, ResultTable


def small_config(**values):
    return ExperimentConfig(**{"study": "iters", "degree": 1, "levels": 1, **values})

def fake_runner(config):
    row = {"degree": config.degree, "tau": config.tau, "steps": config.steps, "level": 1,
           "n_dofs": 9, "iterations": 3, "converged": True}
    return ResultTable.from_rows("iters", [row])

def failing_runner(config):
    raise RuntimeError("study exploded")


async def test_run_studies_collects_rows():
    configs = [small_config(steps=2), small_config(steps=1)]
    table, states = await run_studies(configs, workers=2)
    assert len(table) == 2
    assert table.frame["steps"].tolist() == [1, 2]
    assert table.all_converged
    assert set(states) == {c.label for c in configs}
    assert all(state.status is Status.FINISHED for state in states.values())

async def test_run_studies_is_deterministic():
    configs = [small_config(degree=2), small_config(degree=1)]
    first, _ = await run_studies(configs, workers=2)
    second, _ = await run_studies(configs[::-1], workers=1)
    assert first.frame.equals(second.frame)

async def test_run_studies_rejects_bad_input():
    with pytest.raises(ValueError, match="No studies"):
        await run_studies([])
    with pytest.raises(ValueError, match="Cannot combine"):
        await run_studies([small_config(), small_config(study="spectral")])

async def test_run_studies_reraises_failures(tmp_path):
    bad = tmp_path / "bad.mesh"
    bad.write_text("vertices 1\n")
    with pytest.raises(MeshFormatError):
        await run_studies([small_config(mesh=str(bad))])

async def test_producer_states():
    queue = asyncio.Queue()
    pipeline = ProducerPipeline(data_queue=queue, workers=1)
    good = StudyProducer(small_config(), queue, runner=fake_runner)
    bad = StudyProducer(small_config(steps=2), queue, runner=failing_runner)
    assert good.state.status is Status.STAGED
    pipeline.add_producer(good)
    pipeline.add_producer(bad)
    states = await pipeline.wait()

    assert states[good.producer_name].status is Status.FINISHED
    assert states[bad.producer_name].status is Status.ERRORED
    assert "study exploded" in states[bad.producer_name].last_error
    item = queue.get_nowait()
    assert item["kind"] == "iters" and item["producer"] == good.producer_name
    assert queue.empty()
    await pipeline.stop_pipeline()
    assert pipeline.producers == {}

async def test_duplicate_producer_is_skipped():
    queue = asyncio.Queue()
    pipeline = ProducerPipeline(data_queue=queue)
    pipeline.add_producer(StudyProducer(small_config(), queue, runner=fake_runner))
    pipeline.add_producer(StudyProducer(small_config(), queue, runner=fake_runner))
    await pipeline.wait()
    assert len(pipeline.producers) == 1
    assert queue.qsize() == 1

async def test_cancelled_producer():
    queue = asyncio.Queue()
    pipeline = ProducerPipeline(data_queue=queue)
    blocker = asyncio.Semaphore(0)
    pipeline.semaphore = blocker
    producer = StudyProducer(small_config(), queue, runner=fake_runner)
    pipeline.add_producer(producer)
    await asyncio.sleep(0)
    await pipeline.remove_producer(producer.producer_name)
    assert producer.state.status is Status.CANCELLED
    assert queue.empty()

async def test_consumers_receive_every_item():
    queue = asyncio.Queue()
    pipeline = ConsumerPipeline(data_queue=queue)
    first = TableConsumer(kind="iters", name="first")
    second = TableConsumer(kind="iters", name="second")
    pipeline.add_consumer("first", first)
    pipeline.add_consumer("second", second)
    delegator = asyncio.create_task(pipeline.consumer_delegator())

    for row in fake_runner(small_config()).rows():
        queue.put_nowait({"data": row, "kind": "iters", "producer": "test"})
    queue.put_nowait({"data": {}, "kind": "eoc", "producer": "test"})
    await pipeline.drain()
    delegator.cancel()
    with pytest.raises(asyncio.CancelledError):
        await delegator

    assert len(first.table()) == 1 and len(second.table()) == 1
    await pipeline.remove_consumer("first")
    await pipeline.remove_consumer("second")
    assert first.status is Status.CANCELLED
    assert pipeline.consumers == {}
