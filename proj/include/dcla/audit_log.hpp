#pragma once

#include <json.hpp>

#include <mutex>
#include <ostream>
#include <string>
#include <vector>

#include "dcla/types.hpp"

namespace dcla {

// Thread-safe JSON-lines event log: sync, swap, fallback, train, ...
class AuditLog {
 public:
  void record(Tti tti, std::string event, nlohmann::json fields = nlohmann::json::object()) {
    fields["tti"] = tti;
    fields["event"] = std::move(event);
    std::lock_guard lock(mu_);
    entries_.push_back(std::move(fields));
  }

  std::vector<nlohmann::json> entries() const {
    std::lock_guard lock(mu_);
    return entries_;
  }

  std::size_t count(const std::string& event) const {
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.at("event") == event) ++n;
    return n;
  }

  void write(std::ostream& os) const {
    std::lock_guard lock(mu_);
    for (const auto& e : entries_) os << e.dump() << '\n';
  }

 private:
  mutable std::mutex mu_;
  std::vector<nlohmann::json> entries_;
};

}  // namespace dcla
