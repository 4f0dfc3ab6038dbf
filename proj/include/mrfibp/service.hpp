#pragma once

// Read-only search index over exported heat maps and its HTTP front end.
//
//   GET  /api/health
//   GET  /api/factors
//   POST /api/search    {"groups": [{"factors": [names], "colocated": bool}], "min_score": x?}
//                       or {"query": "A-B+C", "colocated": bool?}
//   GET  /api/heatmap/{image_id}/{factor_name}

#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mrfibp/model.hpp"
#include "mrfibp/representation.hpp"
#include "mrfibp/retrieval.hpp"

namespace httplib {
class Server;
}

namespace mrfibp {

struct SearchRequest {
    QueryTerm query;
    std::optional<double> min_score;
};

/// Immutable after construction, so concurrent searches need no locking.
class SearchIndex {
  public:
    /// Every stack must carry the same factor names; image ids must be unique.
    explicit SearchIndex(std::vector<HeatMapStack> stacks);

    const std::vector<std::string>& factor_names() const { return names_; }
    std::span<const HeatMapStack> stacks() const { return stacks_; }
    std::size_t size() const { return stacks_.size(); }

    /// Throws unknown_factor for an image id that is not indexed.
    const HeatMapStack& stack(const std::string& image_id) const;

    /// The one scoring path shared by the CLI and the HTTP API.
    std::vector<RankedImage> search(const QueryTerm& query,
                                    std::optional<double> min_score = std::nullopt) const;

    /// Parses a POST /api/search body against the index vocabulary.
    SearchRequest parse_request(const std::string& body) const;

  private:
    std::vector<HeatMapStack> stacks_;
    std::vector<std::string> names_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

/// {"results": [{"image_id", "score"}...]} in ranking order.
std::string results_json(std::span<const RankedImage> results);

/// Mounts the API routes on `server`. The index must outlive the server.
/// Optional model metadata is reported by /api/health.
void mount_routes(httplib::Server& server, const SearchIndex& index,
                  const AppearanceModel* model = nullptr);

} // namespace mrfibp
