import asyncio
import logging

from typing import Callable, Dict, Optional

from edg_multigrid.helpers import State, Status
from edg_multigrid.studies import ExperimentConfig, ResultTable, run_study

logger = logging.getLogger(__name__)


class ProducerPipeline:
    """
    Owns the study tasks. At most `workers` studies compute at the same time;
    each one runs its blocking numerics in a worker thread.
    """
    def __init__(self, data_queue: asyncio.Queue, workers: int = 1) -> None:
        self.producers: Dict[str, StudyProducer] = {}
        self.data_queue: asyncio.Queue = data_queue
        self.semaphore = asyncio.Semaphore(workers)

    def get_data_queue(self) -> asyncio.Queue:
        return self.data_queue

    def add_producer(
        self,
        producer: "StudyProducer"
        ) -> None:
        name = producer.producer_name
        if name in self.producers:
            logger.warning("Producer [%s] already added, skipping", name)
            return

        producer.semaphore = self.semaphore
        self.producers[name] = producer
        task = asyncio.create_task(producer.start_loop(), name=name)
        producer.task = task
        logger.info("Task [%s] created", name)

    async def remove_producer(self, producer_name: str) -> None:
        producer = self.producers.get(producer_name, None)
        if not producer or not producer.task:
            logger.warning("Cannot remove producer [%s] that DNE or has no task", producer_name)
            return

        if not producer.task.done():
            producer.task.cancel()
            producer.state.set(Status.CANCELLED)
        try:
            await producer.task
        except asyncio.CancelledError:
            pass
        except Exception as e:
            logger.exception("Error shutting down producer [%s]: [%s]", producer_name, e)
            producer.state.set(Status.ERRORED, repr(e))

        self.producers.pop(producer_name, None)
        logger.info("Producer [%s] fully removed", producer_name)

    async def stop_pipeline(self) -> None:
        for name in list(self.producers):
            await self.remove_producer(name)

    async def wait(self) -> Dict[str, State]:
        """Wait for every study to finish; failures are recorded in the states, not raised."""
        tasks = [p.task for p in self.producers.values() if p.task is not None]
        await asyncio.gather(*tasks, return_exceptions=True)
        return {name: producer.state for name, producer in self.producers.items()}


class StudyProducer:

    def __init__(
        self,
        config: ExperimentConfig,
        data_queue: asyncio.Queue,
        runner: Callable[[ExperimentConfig], ResultTable] = run_study,
        ) -> None:

        # Unique per study: "study|p=..|tau=..|m=.."
        self.producer_name = config.label

        # Statuses are only for information, they are not used for loop control
        self.state = State()
        self.state.set(Status.STAGED)

        self.config = config
        self.runner = runner
        self.data_queue = data_queue
        self.semaphore: Optional[asyncio.Semaphore] = None
        self.task: Optional[asyncio.Task] = None
        self.table: Optional[ResultTable] = None

    async def start_loop(self) -> None:
        try:
            await self.run()
        except asyncio.CancelledError:
            self.state.set(Status.CANCELLED)
            raise
        except Exception as e:
            logger.exception("Study [%s] failed", self.producer_name)
            self.state.set(Status.ERRORED, repr(e))
            raise

    async def run(self) -> None:
        semaphore = self.semaphore or asyncio.Semaphore(1)
        async with semaphore:
            self.state.set(Status.RUNNING)
            # Blocking numerics off the event loop
            self.table = await asyncio.to_thread(self.runner, self.config)

        for row in self.table.rows():
            self.data_queue.put_nowait({"data": row, "kind": self.table.kind, "producer": self.producer_name})
        self.state.set(Status.FINISHED)
        logger.info("Study [%s] produced %d rows in %.2fs", self.producer_name, len(self.table), self.state.elapsed)
