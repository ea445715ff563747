#pragma once

#include <string>
#include <vector>

#include "guardnn/harness.hpp"

// Adversary playbook: a physical/host attacker who can read and rewrite DRAM
// between instructions, snapshot and restore ciphertext+metadata, lie about
// read counters, and drive the instruction queue arbitrarily. Each suite
// reports how many trials the device (or the remote user's verification)
// caught, and whether any plaintext sentinel ever became visible.
namespace guardnn::attacks {

struct AttackOutcome {
    std::string name;
    harness::SchemeId scheme = harness::SchemeId::GuardNnCi;
    u64 trials = 0;
    u64 detected = 0;   // rejected by the device or flagged by user-side checks
    u64 undetected = 0; // accepted despite the attack (legal only without integrity)
    u64 leaks = 0;      // sentinel bytes sighted in DRAM or emitted responses
    u64 crashes = 0;    // exceptions escaping the device
    bool pass = false;
    std::string detail;
};

// Random ciphertext / MAC-table / VN-table / hash-tree bit flips, each
// followed by a read of the affected region and (for integrity modes) an
// undo + clean re-read. Integrity modes must detect every flip; plain
// confidentiality must never leak sentinels.
AttackOutcome tamper_sweep(harness::SchemeId scheme, u64 trials, u64 seed);

// Snapshot/restore interleavings: every combination of {ciphertext, MAC,
// VN table, tree path} rolled back to a stale version after a newer write.
AttackOutcome replay_sweep(harness::SchemeId scheme, u64 trials, u64 seed);

// Host declares a wrong feature-read counter at export time.
AttackOutcome wrong_read_ctr_sweep(harness::SchemeId scheme, u64 trials, u64 seed);

// Random-instruction fuzzing with planted sentinels; passes when nothing
// crashes and no sentinel surfaces anywhere the host can see.
AttackOutcome fuzz_host(u64 campaigns, u64 instructions_per_campaign, u64 seed);

// Single divergences between what the host delivered and what the user
// intended: instruction order, operand value, weight byte, input byte.
// Every trial must flip user-side verification from pass to fail.
std::vector<AttackOutcome> attestation_divergence(u64 trials_per_kind, u64 seed);

// The full battery with defaults sized for the acceptance budget.
std::vector<AttackOutcome> run_standard_battery(u64 seed);

std::string to_table(const std::vector<AttackOutcome>& outcomes);

} // namespace guardnn::attacks
