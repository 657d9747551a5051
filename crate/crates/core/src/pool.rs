//! Worker pool for what-if simulations.
//!
//! Pool threads run at idle scheduling priority so that a batch only soaks
//! up CPU time the physical tick loop leaves unused.

use std::sync::Arc;

use rayon::{ThreadPool, ThreadPoolBuilder};

/// Lowers the calling thread's priority. Best effort: falls back to the
/// maximum nice value where idle scheduling is unavailable.
pub fn lower_current_thread_priority() {
    #[cfg(target_os = "linux")]
    unsafe {
        let param = libc::sched_param { sched_priority: 0 };
        if libc::sched_setscheduler(0, libc::SCHED_IDLE, &param) == 0 {
            return;
        }
    }
    #[cfg(unix)]
    unsafe {
        // With a thread id of 0 this targets the calling thread on Linux.
        libc::setpriority(libc::PRIO_PROCESS, 0, 19);
    }
}

/// A pool of `threads` low-priority workers (all cores when `None`).
pub fn whatif_pool(threads: Option<usize>) -> Arc<ThreadPool> {
    let mut b = ThreadPoolBuilder::new()
        .thread_name(|i| format!("whatif-{i}"))
        .start_handler(|_| lower_current_thread_priority());
    if let Some(n) = threads {
        b = b.num_threads(n.max(1));
    }
    Arc::new(b.build().expect("thread pool starts"))
}
