"""
samslr 测试包

- unit/: 每个模块的单元测试
- integration/: 合成数据上的端到端训练与命令行测试
只包含可重复执行的测试。
"""
