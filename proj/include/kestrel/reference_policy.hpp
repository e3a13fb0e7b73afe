// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <kestrel/provider.hpp>

#include <atomic>
#include <string>

namespace kestrel
{

/// Deterministic stand-in for the backbone model on the chained-lookup benchmark.
///
/// Dispatches on the system prompt header:
/// - agent: resolves one successor link per lookup. Without guidance it trusts the first
///   "<key> points to <value>" statement it sees. When the experience or reflection blocks mention
///   verification, it only accepts the verified successor line of the entry's own page, asking for
///   the stored original pages when a summary lacks it. Links are marked "(verified)" or
///   "(unverified claim)" in its reasoning.
/// - self reflection: UNCERTAIN when the attempt used an unverified claim.
/// - verified reflection: emits source-verification lessons.
/// Every other role is refused.
class ReferencePolicy final: public ChatProvider
{
  public:
    std::string complete(ChatRequest const& request) override;

    [[nodiscard]] std::size_t calls() const { return _calls; }

  private:
    std::string agent_turn(ChatRequest const& request) const;
    static std::string self_reflection(ChatRequest const& request);
    static std::string verified_reflection(ChatRequest const& request);

    std::atomic<std::size_t> _calls { 0 };
};

} // namespace kestrel
