#pragma once

#include <string>
#include <vector>

#include "uqnet/layers.hpp"

namespace uqnet {

// Size knobs for the Shallow ConvNet. Defaults are the full-size reference
// network; desk-scale runs shrink everything through the config file.
struct ConvNetOptions {
    std::size_t temporal_filters = 40;
    std::size_t spatial_filters = 40;
    std::size_t temporal_kernel = 25;
    std::size_t pool_size = 75;
    std::size_t pool_stride = 15;
    double dropout_rate = 0.2;      // before the final dense
    double dropconnect_rate = 0.1;  // after the spatial conv
    std::size_t flipout_units = 10;
    std::size_t duq_dim = 100;
    double duq_length_scale = 0.4;
};

inline const std::vector<std::string>& method_names() {
    static const std::vector<std::string> names = {
        "dropout", "mc_dropout", "dropconnect", "mc_dropconnect",
        "flipout", "ensembles",  "duq"};
    return names;
}

// Builder variants; "ensemble_member" is the topology of one ensemble member
// (identical to the dropout baseline).
inline NetworkSpec build_shallow_convnet(const std::string& variant, std::size_t channels,
                                         std::size_t timesteps, std::size_t classes,
                                         const ConvNetOptions& opt = {}) {
    NetworkSpec net;
    net.channels = channels;
    net.timesteps = timesteps;
    net.classes = classes;

    // base: temporal conv -> spatial conv -> batchnorm -> square -> avgpool -> log
    net.layers.push_back(LayerSpec::conv2d(opt.temporal_filters, 1, opt.temporal_kernel));
    net.layers.push_back(LayerSpec::conv2d(opt.spatial_filters, channels, 1));
    if (variant == "dropconnect" || variant == "mc_dropconnect")
        net.layers.push_back(LayerSpec::dropconnect(opt.dropconnect_rate));
    net.layers.push_back(LayerSpec::batchnorm());
    net.layers.push_back(LayerSpec::square());
    net.layers.push_back(LayerSpec::avgpool(1, opt.pool_size, 1, opt.pool_stride));
    net.layers.push_back(LayerSpec::log_act());

    if (variant == "dropout" || variant == "mc_dropout" || variant == "ensemble_member") {
        net.layers.push_back(LayerSpec::dropout(opt.dropout_rate));
        net.layers.push_back(LayerSpec::dense(classes));
        net.layers.push_back(LayerSpec::softmax());
    } else if (variant == "dropconnect" || variant == "mc_dropconnect") {
        net.layers.push_back(LayerSpec::dense(classes));
        net.layers.push_back(LayerSpec::softmax());
    } else if (variant == "flipout") {
        net.layers.push_back(LayerSpec::dense(opt.flipout_units, Activation::Relu));
        net.layers.push_back(LayerSpec::flipout_dense(opt.flipout_units));
        net.layers.push_back(LayerSpec::flipout_dense(classes));
        net.layers.push_back(LayerSpec::softmax());
    } else if (variant == "duq") {
        net.layers.push_back(LayerSpec::dense(opt.duq_dim, Activation::Relu));
        net.layers.push_back(LayerSpec::rbf(opt.duq_dim, opt.duq_length_scale));
        net.loss = LossKind::BinaryCe;
    } else {
        throw ConfigError("unknown shallow convnet variant: " + variant);
    }
    net.validate();
    return net;
}

}  // namespace uqnet
