# Conditional generative model module
