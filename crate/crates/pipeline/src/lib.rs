//! Job pipeline: a durable at-least-once queue, the splitter and processor
//! workers it feeds, their storage layout, and a timing bench.

pub mod bench;
pub mod bundle;
pub mod callback;
pub mod chaos;
pub mod clock;
pub mod message;
pub mod queue;
pub mod storage;
pub mod worker;

pub use callback::{MemoryNotifier, Notifier, NotifyError, ProcessComplete, SplitComplete, SplitStarted};
pub use clock::{Clock, ManualClock, SystemClock};
pub use message::{JobKind, JobMessage, MESSAGE_VERSION};
pub use queue::{DurableQueue, JobQueue, QueueConfig, QueueError, QueueStats};
pub use storage::{BundleKind, Storage};
pub use worker::{
    process_night, split_recording, FaultInjector, FaultPoint, JobHandler, NoFaults, Processor,
    ProcessorConfig, Splitter, Step, Worker, WorkerError,
};
