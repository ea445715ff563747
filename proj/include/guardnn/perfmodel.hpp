#pragma once

#include <vector>

#include "guardnn/harness.hpp"

// Roofline timing and traffic accounting over a finished session's
// transaction trace. Cycle counts are modeled, not measured: each schedule
// group costs the max of its compute time and its DRAM transfer time, plus
// fixed pipeline-fill and metadata-stall penalties.
namespace guardnn::perfmodel {

struct TimingParams {
    u64 transaction_bytes = 64;       // one DRAM burst per recorded transaction
    u64 bandwidth_bytes_per_cycle = 64;
    u64 macs_per_cycle = 65536;       // 256×256 multiplier array
    u64 layer_fill_cycles = 12;       // decrypt-pipeline fill per protected group
    u64 metadata_stall_cycles = 12;   // per metadata-cache-miss read (tree engine)
};

struct GroupTiming {
    u64 compute_cycles = 0;
    u64 memory_cycles = 0;
    u64 stall_cycles = 0;
    u64 cycles = 0; // max(compute, memory) + fills + stalls
};

// One (network, mode, scheme) measurement. Traffic covers the schedule
// groups plus the end-of-run metadata flush; imports/exports are excluded so
// the ratio isolates the protection overhead on the computation itself.
struct CellPerf {
    harness::SchemeId scheme = harness::SchemeId::Np;
    memprot::PurposeCounts traffic;
    u64 data_tx = 0, mac_tx = 0, vn_tx = 0, tree_tx = 0, total_tx = 0;
    std::vector<GroupTiming> groups; // schedule groups, then the flush bucket
    u64 cycles = 0;
    bool memory_bound = true;        // transfer time dominates compute time
    double traffic_increase = 1.0;   // vs the no-protection run of the same cell
    double slowdown = 1.0;
};

CellPerf analyze(const harness::SessionResult& result, harness::SchemeId scheme,
                 const TimingParams& params);

// Fills in traffic_increase and slowdown against the NP run of the same cell.
void relativize(CellPerf& cell, const CellPerf& np);

// Analytic transaction counts for the tree-less integrity layout: every
// region pass moves size/64 data transactions plus the MAC-table lines its
// chunks map to (8-byte tags packed 8 per line, adjacent chunks combined).
struct CiTrafficOracle {
    u64 data_tx = 0;
    u64 mac_tx = 0;
    std::vector<u64> group_mac_tx; // per schedule group
};

u64 mac_lines_for_pass(u64 base_addr, u64 size_bytes, u64 mac_width_bytes);
CiTrafficOracle ci_oracle(const workload::Dfg& dfg, u32 writes_per_region,
                          u64 mac_width_bytes = 8);

} // namespace guardnn::perfmodel
