import asyncio
import logging

from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional, Sequence, Tuple

from edg_multigrid.helpers import State, Status
from edg_multigrid.producer import ProducerPipeline, StudyProducer
from edg_multigrid.studies import ExperimentConfig, ResultTable

logger = logging.getLogger(__name__)


class ConsumerPipeline():
    def __init__(self, data_queue: asyncio.Queue, name: Optional[str] = None):
        self.data_queue: asyncio.Queue = data_queue
        self.name: str = name or self.__class__.__name__
        self.consumers: Dict[str, BaseConsumer] = {}

    async def consumer_delegator(self):
        """Fan every item of the shared queue out to all consumers."""
        logger.info("Consumer Delegator started")
        try:
            while True:
                data = await self.data_queue.get()
                for consumer in self.consumers.values():
                    consumer.get_data_queue().put_nowait(data)
                self.data_queue.task_done()
        except asyncio.CancelledError:
            logger.info("Delegator cancelled, emptying queue ...")
            while True:
                try:
                    data = self.data_queue.get_nowait()
                except asyncio.QueueEmpty:
                    break
                else:
                    for consumer in self.consumers.values():
                        consumer.get_data_queue().put_nowait(data)
                    self.data_queue.task_done()
            logger.info("Delegator queue emptied. Exiting")
            raise
        except Exception:
            logger.exception("Unhandled error in consumer delegator")
            raise

    def add_consumer(
        self,
        name: str,
        consumer: "BaseConsumer"
        ) -> None:
        if name in self.consumers:
            logger.warning("Consumer [%s] already added, skipping", name)
            return
        self.consumers[name] = consumer
        consumer.set_status(Status.STAGED)
        task = asyncio.create_task(consumer.start_loop(), name=consumer.name)
        task.add_done_callback(consumer.task_done_callback)
        consumer.task = task
        logger.info("Consumer task [%s] created", name)

    async def remove_consumer(self, consumer_name: str) -> None:
        consumer = self.consumers.get(consumer_name, None)
        if not consumer or not consumer.task:
            logger.info("Cannot remove consumer [%s] that DNE or has no task", consumer_name)
            return
        consumer.task.cancel()
        try:
            await consumer.task
        except asyncio.CancelledError:
            pass
        self.consumers.pop(consumer_name)
        logger.info("Consumer [%s] fully removed", consumer_name)

    async def drain(self) -> None:
        """Wait until the shared queue and every consumer queue are processed."""
        await self.data_queue.join()
        for consumer in self.consumers.values():
            await consumer.get_data_queue().join()

    def get_data_queue(self) -> asyncio.Queue:
        return self.data_queue


class BaseConsumer(ABC):
    def __init__(self, name: Optional[str] = None):
        self.name = name or self.__class__.__name__
        self.task: Optional[asyncio.Task] = None
        self.status: Optional[Status] = None
        self.data_queue: asyncio.Queue = asyncio.Queue()

    def get_data_queue(self) -> asyncio.Queue:
        return self.data_queue

    def task_done_callback(self, task: asyncio.Task) -> None:
        if task.cancelled():
            self.status = Status.CANCELLED
        elif task.exception() is not None:
            logger.error("Consumer [%s] failed: %r", self.name, task.exception())
            self.status = Status.ERRORED
        else:
            self.status = Status.FINISHED

    def set_status(self, status: Status) -> None:
        self.status = status

    async def start_loop(self) -> None:
        self.status = Status.RUNNING
        await self.run()

    async def run(self) -> None:
        try:
            while True:
                data = await self.data_queue.get()
                try:
                    self.handle(data)
                finally:
                    self.data_queue.task_done()
        except asyncio.CancelledError:
            logger.info("Consumer [%s] cancelled. Greedily emptying its data queue...", self.name)
            while True:
                try:
                    data = self.data_queue.get_nowait()
                except asyncio.QueueEmpty:
                    break
                else:
                    try:
                        self.handle(data)
                    finally:
                        self.data_queue.task_done()
            raise

    @abstractmethod
    def handle(self, data: Dict[str, Any]) -> None:
        pass

    def get_name(self) -> str:
        return self.name


class TableConsumer(BaseConsumer):
    """Collects study rows of one table kind into a ResultTable."""
    def __init__(self, kind: str, timings: bool = False, name: Optional[str] = None):
        super().__init__(name)
        self.kind = kind
        self.timings = timings
        self.rows: List[Dict[str, Any]] = []

    def handle(self, data: Dict[str, Any]) -> None:
        if data.get("kind") != self.kind:
            logger.warning("Consumer [%s] dropped a [%s] row from [%s]", self.name, data.get("kind"), data.get("producer"))
            return
        self.rows.append(data["data"])

    def table(self) -> ResultTable:
        return ResultTable.from_rows(self.kind, self.rows, self.timings)


async def run_studies(configs: Sequence[ExperimentConfig], workers: int = 1) -> Tuple[ResultTable, Dict[str, State]]:
    """
    Run all studies concurrently and collect their rows into one sorted table.

    Raises:
        ValueError: If configs is empty or mixes study kinds.
        Exception: The first study failure, after the pipeline has shut down.
    """
    if not configs:
        raise ValueError("No studies to run")
    kinds = {config.study for config in configs}
    if len(kinds) != 1:
        raise ValueError(f"Cannot combine study kinds {sorted(kinds)} in one table")

    queue: asyncio.Queue = asyncio.Queue()
    producer_pipeline = ProducerPipeline(data_queue=queue, workers=workers)
    consumer_pipeline = ConsumerPipeline(data_queue=queue)

    collector = TableConsumer(kind=configs[0].study, timings=configs[0].timings)
    consumer_pipeline.add_consumer(name="table", consumer=collector)
    delegator = asyncio.create_task(consumer_pipeline.consumer_delegator(), name="consumer_delegator")

    for config in configs:
        producer_pipeline.add_producer(StudyProducer(config=config, data_queue=producer_pipeline.get_data_queue()))
    states = await producer_pipeline.wait()
    failures = [p.task.exception() for p in producer_pipeline.producers.values()
                if p.task is not None and not p.task.cancelled() and p.task.exception() is not None]

    await consumer_pipeline.drain()
    delegator.cancel()
    try:
        await delegator
    except asyncio.CancelledError:
        pass
    await consumer_pipeline.remove_consumer("table")

    if failures:
        raise failures[0]
    return collector.table(), states
