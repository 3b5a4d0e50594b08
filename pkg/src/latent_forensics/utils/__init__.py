# Utils package for shared helpers
