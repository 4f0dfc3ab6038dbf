#include "mrfibp/pipeline.hpp"

#include <unordered_map>

#include "mrfibp/retrieval.hpp"

namespace mrfibp {

namespace {

void check_sizes(std::span<const FeatureBag> bags, const TargetResult& result) {
    if (result.marginals.size() != bags.size() || result.states.size() != bags.size())
        throw Error(ErrorCode::dimension_mismatch, "inference result does not match the image list");
}

const GridDescriptor& lookup(const std::unordered_map<std::string, const ImageState*>& index,
                             const std::string& id, const char* role) {
    const auto it = index.find(id);
    if (it == index.end())
        throw Error(ErrorCode::validation, std::string(role) + " image '" + id + "' has no state");
    return it->second->descriptor;
}

} // namespace

std::vector<HeatMapStack> heatmaps_of(std::span<const FeatureBag> bags, const TargetResult& result) {
    check_sizes(bags, result);
    std::vector<HeatMapStack> out;
    out.reserve(bags.size());
    for (std::size_t i = 0; i < bags.size(); ++i)
        out.push_back(heatmaps_from_marginals(bags[i], result.marginals[i], result.model.factor_names));
    return out;
}

std::vector<ImageState> describe_images(std::span<const FeatureBag> bags, const TargetResult& result) {
    const auto stacks = heatmaps_of(bags, result);
    std::vector<ImageState> out;
    out.reserve(bags.size());
    for (std::size_t i = 0; i < bags.size(); ++i) {
        ImageState s;
        s.image_id = bags[i].image_id;
        s.width = bags[i].width;
        s.height = bags[i].height;
        s.factor_names = result.model.factor_names;
        const auto k = static_cast<Eigen::Index>(result.model.factors());
        s.z = BinaryMatrix::Zero(static_cast<Eigen::Index>(bags[i].size()), k);
        const auto& z = result.states[i].z();
        s.z.leftCols(std::min(k, z.cols())) = z.leftCols(std::min(k, z.cols()));
        s.marginals = Matrix::Zero(s.z.rows(), k);
        const auto& m = result.marginals[i];
        s.marginals.leftCols(std::min(k, m.cols())) = m.leftCols(std::min(k, m.cols()));
        s.descriptor = grid_descriptor(stacks[i]);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<double> reid_cmc(std::span<const ImageState> probes, std::span<const ImageState> gallery,
                             std::span<const std::pair<std::string, std::string>> pairs, int row_band,
                             std::size_t threads) {
    std::unordered_map<std::string, const ImageState*> probe_index;
    std::unordered_map<std::string, std::size_t> gallery_index;
    for (const auto& s : probes) probe_index.emplace(s.image_id, &s);
    for (std::size_t i = 0; i < gallery.size(); ++i) gallery_index.emplace(gallery[i].image_id, i);
    std::vector<GridDescriptor> p, g;
    std::vector<std::size_t> truth;
    for (const auto& [probe, match] : pairs) {
        p.push_back(lookup(probe_index, probe, "probe"));
        const auto it = gallery_index.find(match);
        if (it == gallery_index.end())
            throw Error(ErrorCode::validation, "gallery image '" + match + "' has no state");
        truth.push_back(it->second);
    }
    for (const auto& s : gallery) g.push_back(s.descriptor);
    const Matrix d = distance_matrix(p, g, row_band, threads);
    return cmc_curve(d, truth);
}

std::vector<double> reid_cmc(std::span<const ImageState> states,
                             std::span<const std::pair<std::string, std::string>> pairs, int row_band,
                             std::size_t threads) {
    std::unordered_map<std::string, const ImageState*> index;
    for (const auto& s : states) index.emplace(s.image_id, &s);
    std::vector<ImageState> gallery;
    for (const auto& [_, match] : pairs) {
        const auto it = index.find(match);
        if (it == index.end()) throw Error(ErrorCode::validation, "gallery image '" + match + "' has no state");
        gallery.push_back(*it->second);
    }
    return reid_cmc(states, gallery, pairs, row_band, threads);
}

} // namespace mrfibp
