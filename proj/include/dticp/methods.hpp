#pragma once
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ccp.hpp"
#include "clustering.hpp"
#include "conformal.hpp"
#include "core.hpp"

namespace dticp {

// The five interval methods behind one calibrate / predict pair.
enum class Method { MCP, GCP, CCP_NC, CCP_FC, CCP_NN };

inline const char* to_string(Method m) {
    switch (m) {
        case Method::MCP: return "MCP";
        case Method::GCP: return "GCP";
        case Method::CCP_NC: return "CCP-NC";
        case Method::CCP_FC: return "CCP-FC";
        case Method::CCP_NN: return "CCP-NN";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    for (auto m : {Method::MCP, Method::GCP, Method::CCP_NC, Method::CCP_FC, Method::CCP_NN})
        if (s == to_string(m)) return m;
    if (s == "NC") return Method::CCP_NC;
    if (s == "FC") return Method::CCP_FC;
    if (s == "NN") return Method::CCP_NN;
    throw ConfigError("unknown method '" + s + "' (MCP, GCP, CCP-NC, CCP-FC, CCP-NN)");
}

inline CcpMethod ccp_method_of(Method m) {
    switch (m) {
        case Method::CCP_NC: return CcpMethod::NC;
        case Method::CCP_FC: return CcpMethod::FC;
        case Method::CCP_NN: return CcpMethod::NN;
        default: throw ConfigError(std::string(to_string(m)) + " is not a cluster-conditioned method");
    }
}

// Side information some methods need: raw features (FC) and binary profiles (NN).
struct MethodInputs {
    const DrugFeatures* drug_features = nullptr;
    const ProteinFeatures* protein_features = nullptr;
    const DrugBits* drug_bits = nullptr;
    const ProteinBits* protein_bits = nullptr;
};

using Calibration = std::variant<MarginalCalibration, GroupCalibration, CcpModel, NnCalibration>;

inline Method method_of(const Calibration& c) {
    if (std::holds_alternative<MarginalCalibration>(c)) return Method::MCP;
    if (std::holds_alternative<GroupCalibration>(c)) return Method::GCP;
    if (auto* m = std::get_if<CcpModel>(&c)) return m->config.method == CcpMethod::FC ? Method::CCP_FC : Method::CCP_NC;
    return Method::CCP_NN;
}

inline double alpha_of(const Calibration& c) {
    return std::visit([](const auto& x) { return x.alpha; }, c);
}

// `ccp` supplies gamma / K / neighbours / seed for the CCP methods; its alpha
// and method fields are overwritten.
inline Calibration calibrate(Method method, const InteractionTable& table, std::span<const std::size_t> cal_rows,
                             double alpha, CcpConfig ccp = {}, const MethodInputs& in = {}) {
    switch (method) {
        case Method::MCP: return calibrate_mcp(table, cal_rows, alpha);
        case Method::GCP: return build_group_calibration(table, cal_rows, alpha);
        case Method::CCP_NC:
            ccp.method = CcpMethod::NC;
            ccp.alpha = alpha;
            return calibrate_ccp_nc(table, cal_rows, ccp);
        case Method::CCP_FC:
            if (!in.drug_features || !in.protein_features) throw ConfigError("CCP-FC needs drug and protein features");
            ccp.method = CcpMethod::FC;
            ccp.alpha = alpha;
            return calibrate_ccp_fc(table, cal_rows, *in.drug_features, *in.protein_features, ccp);
        case Method::CCP_NN:
            if (!in.drug_bits || !in.protein_bits) throw ConfigError("CCP-NN needs binary drug and protein profiles");
            ccp.method = CcpMethod::NN;
            ccp.alpha = alpha;
            return calibrate_ccp_nn(table, cal_rows, *in.drug_bits, *in.protein_bits, ccp);
    }
    throw ConfigError("unknown method");
}

// Same calibration data at another miscoverage level.
inline Calibration with_alpha(Calibration c, double alpha) {
    check_alpha(alpha);
    std::visit(
        [alpha](auto& x) {
            using T = std::decay_t<decltype(x)>;
            x.alpha = alpha;
            if constexpr (std::is_same_v<T, MarginalCalibration>) x.threshold = quantile_of(x.scores, alpha);
            if constexpr (std::is_same_v<T, CcpModel>) x.config.alpha = alpha;
        },
        c);
    return c;
}

inline std::vector<IntervalPrediction> predict_intervals(const Calibration& c, std::span<const PairQuery> queries,
                                                         const MethodInputs& in = {}) {
    if (auto* m = std::get_if<MarginalCalibration>(&c)) return predict_intervals_mcp(*m, queries);
    if (auto* g = std::get_if<GroupCalibration>(&c)) return predict_intervals_gcp(*g, queries);
    if (auto* m = std::get_if<CcpModel>(&c)) return predict_intervals_ccp(*m, queries, in.drug_features, in.protein_features);
    const auto& nn = std::get<NnCalibration>(c);
    if (!in.drug_bits || !in.protein_bits) throw ConfigError("CCP-NN needs binary drug and protein profiles");
    return predict_intervals_ccp_nn(nn, queries, *in.drug_bits, *in.protein_bits);
}

} // namespace dticp
