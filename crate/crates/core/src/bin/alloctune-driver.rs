//! Replays the synthetic schedule of a workload profile against the process
//! allocator. Exit status: 0 on success, 1 on usage errors, 2 when the
//! profile cannot be loaded, 3 when an allocation fails.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use alloctune::workload::{Schedule, ScheduleOp, WorkloadProfile};

#[derive(Parser)]
#[command(version, about = "Synthetic allocation workload driver")]
struct Args {
    /// Workload profile (TOML).
    profile: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write one byte per page of every block so its memory is committed.
    #[arg(long)]
    touch: bool,
    #[arg(long, default_value_t = 4096, value_parser = clap::value_parser!(u64).range(1..))]
    page_size: u64,
}

fn touch(ptr: *mut u8, size: usize, page: usize) {
    let mut off = 0;
    while off < size {
        // SAFETY: `ptr` points to a live block of at least `size` bytes.
        unsafe { ptr.add(off).write_volatile(1) };
        off += page;
    }
    if size > 0 {
        // SAFETY: as above; the last byte is in bounds.
        unsafe { ptr.add(size - 1).write_volatile(1) };
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let loaded = WorkloadProfile::load(&args.profile).and_then(|p| Ok((Schedule::new(&p, args.seed)?, p)));
    let (schedule, profile) = match loaded {
        Ok(v) => v,
        Err(e) => {
            eprintln!("alloctune-driver: {e}");
            return ExitCode::from(2);
        }
    };
    let page = args.page_size as usize;
    let mut table: Vec<(*mut u8, usize)> = Vec::with_capacity(profile.max_live_blocks as usize);
    let (mut allocs, mut frees, mut live, mut max_live) = (0u64, 0u64, 0usize, 0usize);

    for op in schedule {
        match op {
            ScheduleOp::Alloc { size, .. } => {
                let Ok(size) = usize::try_from(size) else {
                    eprintln!("alloctune-driver: block size {size} exceeds the address space");
                    return ExitCode::from(3);
                };
                // SAFETY: plain call into the C allocator; the result is checked.
                let ptr = unsafe { libc::malloc(size) } as *mut u8;
                if ptr.is_null() && size > 0 {
                    eprintln!("alloctune-driver: malloc({size}) failed after {allocs} allocations");
                    return ExitCode::from(3);
                }
                if args.touch && !ptr.is_null() {
                    touch(ptr, size, page);
                }
                table.push((ptr, size));
                allocs += 1;
                live += size;
                max_live = max_live.max(live);
            }
            ScheduleOp::Free { slot, .. } => {
                let (ptr, size) = table.swap_remove(slot);
                // SAFETY: `ptr` came from malloc and is freed exactly once.
                unsafe { libc::free(ptr.cast()) };
                frees += 1;
                live -= size;
            }
        }
    }
    println!("ops={} allocs={allocs} frees={frees} max_live_bytes={max_live}", allocs + frees);
    ExitCode::SUCCESS
}
