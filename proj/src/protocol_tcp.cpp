// Copyright 2026 The fedflag Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <exception>
#include <thread>

#include "fedflag/error.hpp"
#include "fedflag/protocol.hpp"
#include "fedflag/tcp.hpp"

namespace fedflag::protocol {

std::map<PartyId, transport::TcpAddress> peers_of(
    PartyId self, const std::map<PartyId, transport::TcpAddress>& directory) {
  std::map<PartyId, transport::TcpAddress> out;
  for (const auto& [id, addr] : directory) {
    if (id == self) continue;
    // Banks never talk to each other.
    if (self.role == Role::kBank && id.role == Role::kBank) continue;
    out[id] = addr;
  }
  return out;
}

TrainOutcome train_tcp_loopback(const Federation& fed, const ProtocolConfig& cfg) {
  using namespace std::chrono_literals;
  cfg.validate();
  ModelBatchSource src(fed.hub_train, cfg.train);
  Hub hub(src, fed.bank_count, cfg);
  Aggregator agg(fed.bank_count, src.dimension(), cfg);
  std::vector<std::unique_ptr<Bank>> banks;
  for (std::uint32_t b = 0; b < fed.bank_count; ++b)
    banks.push_back(std::make_unique<Bank>(b, fed.bank_accounts.at(b), cfg));

  std::vector<transport::Party*> parties{&hub, &agg};
  for (auto& b : banks) parties.push_back(b.get());
  std::vector<std::unique_ptr<transport::TcpEndpoint>> eps;
  std::map<PartyId, transport::TcpAddress> dir;
  for (auto* p : parties) {
    eps.push_back(std::make_unique<transport::TcpEndpoint>(p->id()));
    std::uint16_t port = 0;
    if (p->id().role != Role::kBank) port = eps.back()->listen("127.0.0.1", 0);
    dir[p->id()] = {"127.0.0.1", port};
  }

  std::vector<std::exception_ptr> errors(parties.size());
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < parties.size(); ++i) {
    threads.emplace_back([&, i] {
      try {
        eps[i]->connect(peers_of(parties[i]->id(), dir));
        transport::run_tcp(*parties[i], *eps[i], 120s);
      } catch (...) {
        errors[i] = std::current_exception();
        eps[i]->abort();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  TrainOutcome o;
  // Byte counts come from the sending side of each link.
  for (std::size_t i = 0; i < parties.size(); ++i)
    o.comms.merge(eps[i]->stats().sent_by(parties[i]->id()));
  for (auto& ep : eps) ep->close();
  o.model = src.model();
  o.steps = hub.batches_done();
  o.skipped = src.skipped();
  o.ot_transfers = hub.ot_transfers();
  o.hub_view = hub.view();
  LeakageLedger l;
  for (const auto& b : banks) {
    const auto i = b->id().bank_index;
    l.bank_train_queries[i] = b->train_queries();
    l.bank_key_queries[i] = b->key_queries();
    l.bank_infer_queries[i] = b->infer_queries();
  }
  l.aggregator_observations = agg.observations();
  o.leakage = l;
  return o;
}

}  // namespace fedflag::protocol
